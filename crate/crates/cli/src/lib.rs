//! The `pct` command line tool and HTTP service.
//!
//! Exit codes: 0 on success, 1 for configuration and usage errors, 2 for
//! runtime and endpoint failures.

pub mod service;
pub mod settings;

use std::ffi::OsString;
use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use pct_core::compressors::{policy_ratio_gap, train_scrl_policy, ScrlTrainConfig};
use pct_core::datasets::Registry;
use pct_core::runner::{run_eval, write_report, EvalReport, ReportFormat, RunConfig, RunError};
use pct_core::{fit_ngram, CompressError, CompressionRequest, CompressorKind};

use settings::ServiceConfig;

#[derive(Debug, Parser)]
#[command(name = "pct", version, about = "Prompt compression toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compress text and print the result.
    Compress {
        #[arg(long)]
        compressor: String,
        #[arg(long)]
        ratio: f64,
        #[arg(long)]
        question: Option<String>,
        #[arg(long)]
        instruction: Option<String>,
        #[arg(long)]
        max_length: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// File to read, or `-` for stdin.
        #[arg(long)]
        input: String,
        /// Scorer, generator and compressor settings (service config format).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Print the full result with its trace as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run an evaluation described by a config file.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Report path; overrides `[output]` in the config.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_parser = parse_format)]
        format: Option<ReportFormat>,
    },
    /// Inspect the dataset registry.
    Datasets {
        #[command(subcommand)]
        action: DatasetsAction,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Allowed CORS origin; repeatable.
        #[arg(long = "origin")]
        origins: Vec<String>,
    },
    /// Train an SCRL keep policy on a text corpus (one document per line).
    TrainScrl {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0.5)]
        target_ratio: f64,
        #[arg(long, default_value_t = 0.5)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the policy JSON; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum DatasetsAction {
    /// List registered datasets.
    List {
        #[arg(long)]
        registry: Option<PathBuf>,
    },
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    match s {
        "json" => Ok(ReportFormat::Json),
        "csv" => Ok(ReportFormat::Csv),
        _ => Err(format!("unknown report format {s:?} (json or csv)")),
    }
}

/// A failure with the exit code it maps to.
struct Failure {
    code: i32,
    message: String,
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Failure {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

impl From<CompressError> for Failure {
    fn from(e: CompressError) -> Self {
        let code = match e {
            CompressError::InvalidRequest { .. } | CompressError::Unavailable(..) => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    RunError::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

fn env_lookup(key: &str) -> Option<String> {
    std::env::var(key).ok()
}

fn service_config(path: Option<&Path>) -> Result<ServiceConfig, Failure> {
    let mut cfg = match path {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    cfg.apply_env(env_lookup);
    Ok(cfg)
}

fn read_input(input: &str) -> Result<String, Failure> {
    if input == "-" {
        let mut s = String::new();
        std::io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| io_failure(Path::new("<stdin>"), e))?;
        Ok(s)
    } else {
        std::fs::read_to_string(input).map_err(|e| io_failure(Path::new(input), e))
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_compress(
    compressor: &str,
    ratio: f64,
    question: Option<String>,
    instruction: Option<String>,
    max_length: Option<usize>,
    seed: Option<u64>,
    input: &str,
    config: Option<&Path>,
    json: bool,
) -> Result<(), Failure> {
    let kind: CompressorKind = compressor.parse().map_err(|e: pct_core::contract::UnknownCompressor| config_error(e.to_string()))?;
    let text = read_input(input)?;
    let mut req = CompressionRequest::new(text, kind, ratio);
    req.question = question;
    req.instruction = instruction;
    req.max_length = max_length;
    req.seed = seed;
    // reject bad parameters before fitting or contacting any scorer
    pct_core::compressors::validate(&req)?;
    let compressor = service_config(config)?.build_compressor()?;
    let result = compressor.compress(&req)?;
    for note in &result.notes {
        log::info!("{note}");
    }
    if json {
        let out = serde_json::to_string_pretty(&result).map_err(|e| config_error(e.to_string()))?;
        println!("{out}");
    } else {
        println!("{}", result.compressed);
    }
    Ok(())
}

fn summarize(report: &EvalReport) {
    for s in &report.sections {
        let metrics: Vec<String> = s
            .aggregates
            .metrics
            .iter()
            .filter(|(k, _)| !k.contains('.'))
            .map(|(k, v)| format!("{k}={v:.4}"))
            .collect();
        eprintln!(
            "ratio {}: {} rows, {} skipped, achieved {:.4}; {}",
            s.ratio,
            s.rows.len(),
            s.skips.len(),
            s.aggregates.mean_achieved_ratio.unwrap_or(f64::NAN),
            metrics.join(" ")
        );
    }
}

fn cmd_eval(config: &Path, output: Option<PathBuf>, format: Option<ReportFormat>) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(config)?;
    cfg.apply_env(env_lookup);
    let report = run_eval(&cfg)?;
    summarize(&report);
    let format = format.or(cfg.output.as_ref().map(|o| o.format)).unwrap_or_default();
    match output.or(cfg.output.as_ref().map(|o| o.path.clone())) {
        Some(path) => write_report(&report, format, &path)?,
        None => {
            let text = match format {
                ReportFormat::Json => report.to_json()?,
                ReportFormat::Csv => report.to_csv()?,
            };
            print!("{text}");
        }
    }
    Ok(())
}

fn cmd_datasets_list(registry: Option<&Path>) -> Result<(), Failure> {
    let registry = match registry {
        Some(p) => Registry::load(p).map_err(RunError::from)?,
        None => Registry::bundled(),
    };
    println!("name\tfamily\ttask\trecords\tpath");
    for m in registry.manifests() {
        let records = match pct_core::datasets::load_dataset(m) {
            Ok(r) => r.len().to_string(),
            Err(e) => format!("error: {e}"),
        };
        println!(
            "{}\t{}\t{}\t{}\t{}",
            m.name,
            m.family,
            serde_json::to_value(m.task()).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
            records,
            m.path.display()
        );
    }
    Ok(())
}

fn cmd_serve(port: Option<u16>, host: Option<String>, config: Option<&Path>, origins: Vec<String>) -> Result<(), Failure> {
    let mut cfg = service_config(config)?;
    if let Some(p) = port {
        cfg.port = p;
    }
    if let Some(h) = host {
        cfg.host = h;
    }
    if !origins.is_empty() {
        cfg.origins = origins;
    }
    let compressor = cfg.build_compressor()?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure {
        code: 2,
        message: e.to_string(),
    })?;
    runtime.block_on(async {
        let addr = format!("{}:{}", cfg.host, cfg.port);
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| Failure {
            code: 2,
            message: format!("cannot bind {addr}: {e}"),
        })?;
        eprintln!("listening on http://{}", listener.local_addr().map(|a| a.to_string()).unwrap_or(addr));
        service::serve(listener, service::router(compressor, &cfg.origins))
            .await
            .map_err(|e| Failure {
                code: 2,
                message: e.to_string(),
            })
    })
}

fn cmd_train_scrl(
    corpus: &Path,
    config: ScrlTrainConfig,
    output: Option<PathBuf>,
) -> Result<(), Failure> {
    let text = std::fs::read_to_string(corpus).map_err(|e| io_failure(corpus, e))?;
    let docs: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let scorer = fit_ngram(&docs, 2, 0.1).map_err(|e| config_error(e.to_string()))?;
    let runtime = |e: pct_core::compressors::TrainError| config_error(e.to_string());
    let before = policy_ratio_gap(
        config.init.as_ref().unwrap_or(&Default::default()),
        &docs,
        config.target_ratio,
        &scorer,
    )
    .map_err(runtime)?;
    let policy = train_scrl_policy(&docs, &config, &scorer).map_err(runtime)?;
    let after = policy_ratio_gap(&policy, &docs, config.target_ratio, &scorer).map_err(runtime)?;
    eprintln!("ratio gap {before:.4} -> {after:.4}");
    let json = serde_json::to_string_pretty(&policy).map_err(|e| config_error(e.to_string()))? + "\n";
    match output {
        Some(path) => std::fs::write(&path, json).map_err(|e| io_failure(&path, e)),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Compress {
            compressor,
            ratio,
            question,
            instruction,
            max_length,
            seed,
            input,
            config,
            json,
        } => cmd_compress(
            &compressor,
            ratio,
            question,
            instruction,
            max_length,
            seed,
            &input,
            config.as_deref(),
            json,
        ),
        Command::Eval { config, output, format } => cmd_eval(&config, output, format),
        Command::Datasets {
            action: DatasetsAction::List { registry },
        } => cmd_datasets_list(registry.as_deref()),
        Command::Serve {
            port,
            host,
            config,
            origins,
        } => cmd_serve(port, host, config.as_deref(), origins),
        Command::TrainScrl {
            corpus,
            steps,
            target_ratio,
            learning_rate,
            seed,
            output,
        } => cmd_train_scrl(
            &corpus,
            ScrlTrainConfig {
                steps,
                target_ratio,
                learning_rate,
                seed,
                ..Default::default()
            },
            output,
        ),
    };
    match outcome {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
