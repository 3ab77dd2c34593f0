//! Evaluation runs: compress every dataset row, query the target LLM, score
//! the outcome and aggregate it into an [`EvalReport`].

pub mod cassette;
pub mod config;
pub mod report;

use std::path::PathBuf;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::compressors::PromptCompressor;
use crate::contract::CompressionRequest;
use crate::datasets::{DatasetError, DatasetRecord, Family, Registry, Task};
use crate::metrics::{extract_answer, AnswerFormat, MetricError, MetricKind};
use crate::remote::{Embedder, GenerationRequest, OpenAiEmbedder, OpenAiGenerator, RemoteError, TextGenerator};
use crate::scorer::{fit_ngram, RemoteScorer, Scorer};

pub use cassette::{request_key, Cassette, CassetteEmbedder, CassetteGenerator, EchoGenerator};
pub use config::{
    CassetteMode, CompressorSection, EmbedderConfig, LlmConfig, Mode, OutputConfig, Ratios,
    ReportFormat, RunConfig, ScorerConfig, ScorerCorpus,
};
pub use report::{read_report, write_report, Aggregates, EvalReport, Row, Section, Skip};

/// Background text for the n-gram scorer when no dataset corpus is used.
pub const BUNDLED_CORPUS: &str = include_str!("../../fixtures/corpus.txt");

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("endpoint: {0}")]
    Endpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cassette: {0}")]
    Cassette(String),
    #[error("report: {0}")]
    Report(String),
}

impl RunError {
    /// Process exit code: 1 for configuration problems, 2 for everything
    /// that went wrong at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Dataset(_) => 1,
            _ => 2,
        }
    }
}

const RECONSTRUCT_PROMPT: &str = "The user's text was compressed by deleting words. \
     Reconstruct the original text as closely as possible. Reply with the reconstructed text only.";
const SUMMARIZE_PROMPT: &str = "Summarize the user's text in one sentence. Reply with the summary only.";

fn answer_prompt(format: AnswerFormat) -> &'static str {
    match format {
        AnswerFormat::Gsm8k => {
            "Solve the problem step by step. End your reply with '#### ' followed by the final number."
        }
        AnswerFormat::Boolean => "Answer with True or False.",
        AnswerFormat::MultipleChoice => {
            "Answer with the letter of the correct option in parentheses, for example (A)."
        }
        AnswerFormat::Freeform => "Answer the question briefly.",
    }
}

struct Context {
    compressor: PromptCompressor,
    target: Arc<dyn TextGenerator>,
    embedder: Option<Arc<dyn Embedder>>,
    config: RunConfig,
    task: Task,
}

/// Opened cassettes, shared when two sections name the same file.
#[derive(Default)]
struct Tapes(Vec<(PathBuf, Arc<Cassette>)>);

impl Tapes {
    fn open(&mut self, path: &PathBuf, mode: CassetteMode) -> Result<Arc<Cassette>, RunError> {
        if let Some((_, c)) = self.0.iter().find(|(p, _)| p == path) {
            if c.mode() != mode {
                return Err(RunError::Config(format!(
                    "cassette {} is used with two different modes",
                    path.display()
                )));
            }
            return Ok(c.clone());
        }
        let c = Arc::new(Cassette::open(path, mode)?);
        self.0.push((path.clone(), c.clone()));
        Ok(c)
    }

    fn save(&self) -> Result<(), RunError> {
        self.0.iter().try_for_each(|(_, c)| c.save())
    }
}

fn endpoint_error(what: &str, e: RemoteError) -> RunError {
    RunError::Endpoint(format!("{what}: {e}"))
}

/// Whether the live endpoint will be contacted for anything.
fn needs_endpoint(cassette: Option<&PathBuf>, mode: CassetteMode) -> bool {
    cassette.is_none() || mode == CassetteMode::Record
}

fn build_llm(what: &str, cfg: &LlmConfig, tapes: &mut Tapes) -> Result<Arc<dyn TextGenerator>, RunError> {
    let inner: Option<Arc<dyn TextGenerator>> = if cfg.echo {
        Some(Arc::new(EchoGenerator))
    } else if cfg.cassette.is_some() && cfg.cassette_mode == CassetteMode::Replay {
        None
    } else {
        let g = OpenAiGenerator::new(cfg.endpoint.clone(), cfg.api).map_err(|e| endpoint_error(what, e))?;
        if needs_endpoint(cfg.cassette.as_ref(), cfg.cassette_mode) {
            g.probe().map_err(|e| endpoint_error(what, e))?;
        }
        Some(Arc::new(g))
    };
    match &cfg.cassette {
        Some(path) => Ok(Arc::new(CassetteGenerator {
            inner,
            model: if cfg.echo { "echo".into() } else { cfg.endpoint.model.clone() },
            cassette: tapes.open(path, cfg.cassette_mode)?,
        })),
        None => inner.ok_or_else(|| RunError::Config(format!("{what} has no endpoint"))),
    }
}

fn build_embedder(cfg: &EmbedderConfig, tapes: &mut Tapes) -> Result<Arc<dyn Embedder>, RunError> {
    let inner: Option<Arc<dyn Embedder>> =
        if cfg.cassette.is_some() && cfg.cassette_mode == CassetteMode::Replay {
            None
        } else {
            let e = OpenAiEmbedder::new(cfg.endpoint.clone()).map_err(|e| endpoint_error("embedder", e))?;
            if needs_endpoint(cfg.cassette.as_ref(), cfg.cassette_mode) {
                e.probe().map_err(|e| endpoint_error("embedder", e))?;
            }
            Some(Arc::new(e))
        };
    match &cfg.cassette {
        Some(path) => Ok(Arc::new(CassetteEmbedder {
            inner,
            model: cfg.endpoint.model.clone(),
            cassette: tapes.open(path, cfg.cassette_mode)?,
        })),
        None => inner.ok_or_else(|| RunError::Config("embedder has no endpoint".into())),
    }
}

fn build_scorer(cfg: &ScorerConfig, records: &[DatasetRecord]) -> Result<Arc<dyn Scorer>, RunError> {
    match cfg {
        ScorerConfig::Ngram {
            order,
            smoothing_k,
            corpus,
        } => {
            let docs: Vec<&str> = match corpus {
                ScorerCorpus::Dataset => records
                    .iter()
                    .flat_map(|r| std::iter::once(r.source.as_str()).chain(r.question.as_deref()))
                    .collect(),
                ScorerCorpus::Bundled => BUNDLED_CORPUS.lines().collect(),
            };
            let model = fit_ngram(&docs, *order, *smoothing_k).map_err(|e| RunError::Config(e.to_string()))?;
            Ok(Arc::new(model))
        }
        ScorerConfig::Remote { endpoint } => {
            let s = RemoteScorer::new(endpoint.clone()).map_err(|e| endpoint_error("scorer", e))?;
            s.probe().map_err(|e| endpoint_error("scorer", e))?;
            Ok(Arc::new(s))
        }
    }
}

fn generate(ctx: &Context, system: &str, prompt: String) -> Result<String, String> {
    let llm = ctx.config.target_llm.as_ref();
    let req = GenerationRequest {
        system: Some(system.to_string()),
        prompt,
        n: 1,
        temperature: llm.map_or(0.0, |l| l.temperature),
        max_tokens: llm.and_then(|l| l.max_tokens),
        seed: Some(ctx.config.seed),
    };
    let mut out = ctx.target.generate(&req).map_err(|e| format!("target LLM: {e}"))?;
    if out.is_empty() {
        return Err("target LLM returned no text".into());
    }
    Ok(out.swap_remove(0).trim().to_string())
}

/// Scores `candidate` against `reference` and files the value (and its
/// components) under `name` + `suffix`.
fn record_metric(
    row: &mut Row,
    kind: MetricKind,
    candidate: &str,
    reference: &str,
    suffix: &str,
    embedder: Option<&dyn Embedder>,
) -> Result<(), String> {
    let key = format!("{}{suffix}", kind.name());
    match kind.score_pair(candidate, reference, embedder) {
        Ok(v) if v.value.is_finite() => {
            for (c, x) in &v.components {
                if x.is_finite() {
                    row.metrics.insert(format!("{key}.{c}"), *x);
                }
            }
            row.metrics.insert(key, v.value);
            Ok(())
        }
        Ok(_) => {
            row.unavailable.insert(key, "metric is not finite".into());
            Ok(())
        }
        Err(MetricError::Unavailable(why)) => {
            row.unavailable.insert(key, why);
            Ok(())
        }
        Err(e) => Err(format!("{key}: {e}")),
    }
}

fn process_row(ctx: &Context, rec: &DatasetRecord, ratio: f64) -> Result<Row, String> {
    let started = Instant::now();
    let section = &ctx.config.compressor;
    let mut req = CompressionRequest::new(rec.source.clone(), section.name, ratio).with_seed(ctx.config.seed);
    if let Some(q) = &rec.question {
        req = req.with_question(q.clone());
    }
    if let Some(m) = section.max_length {
        req = req.with_max_length(m);
    }
    let result = ctx.compressor.compress(&req).map_err(|e| format!("compression: {e}"))?;
    let mut row = Row {
        id: rec.id.clone(),
        original_len: result.original_len,
        compressed_len: result.compressed_len,
        achieved_ratio: result.achieved_ratio,
        metrics: Default::default(),
        unavailable: Default::default(),
        prediction: None,
        latency_ms: None,
    };
    let embedder = ctx.embedder.as_deref();
    // The prompt as it was before compression, so that ratio 0 compares equal.
    let original = match (&rec.question, result.includes_question) {
        (Some(q), true) => format!("{}\n\n{q}", rec.source),
        _ => rec.source.clone(),
    };

    match ctx.config.mode {
        Mode::IntrinsicReconstruction => {
            let rebuilt = generate(ctx, RECONSTRUCT_PROMPT, result.compressed.clone())?;
            for &m in &ctx.config.metrics {
                record_metric(&mut row, m, &rebuilt, &original, "", embedder)?;
                record_metric(&mut row, m, &rebuilt, &result.compressed, "@compressed", embedder)?;
            }
            row.prediction = Some(rebuilt);
        }
        Mode::IntrinsicSummarization => {
            let of_original = generate(ctx, SUMMARIZE_PROMPT, original)?;
            let of_compressed = generate(ctx, SUMMARIZE_PROMPT, result.compressed.clone())?;
            for &m in &ctx.config.metrics {
                record_metric(&mut row, m, &of_compressed, &of_original, "", embedder)?;
                if let Some(reference) = &rec.reference {
                    record_metric(&mut row, m, &of_compressed, reference, "@reference", embedder)?;
                }
            }
            row.prediction = Some(of_compressed);
        }
        Mode::ExtrinsicAnswer => {
            let mut prompt = result.compressed.clone();
            if let (Some(q), false) = (&rec.question, result.includes_question) {
                prompt = format!("{prompt}\n\n{q}");
            }
            let output = generate(ctx, answer_prompt(ctx.task.answer_format()), prompt)?;
            let predicted = extract_answer(&output, ctx.task.answer_format());
            for &m in &ctx.config.metrics {
                if m == MetricKind::Accuracy {
                    let gold = rec.answer.as_deref().ok_or("row has no gold answer")?;
                    record_metric(&mut row, m, &predicted, gold, "", embedder)?;
                } else {
                    let reference = rec
                        .reference
                        .as_deref()
                        .or(rec.answer.as_deref())
                        .ok_or("row has no reference text")?;
                    record_metric(&mut row, m, &output, reference, "", embedder)?;
                }
            }
            row.prediction = Some(predicted);
        }
    }
    if ctx.config.timing {
        row.latency_ms = Some(u64::try_from(started.elapsed().as_millis()).unwrap_or(u64::MAX));
    }
    Ok(row)
}

fn process_with_timeout(ctx: &Arc<Context>, rec: &DatasetRecord, ratio: f64) -> Result<Row, String> {
    let Some(ms) = ctx.config.row_timeout_ms else {
        return process_row(ctx, rec, ratio);
    };
    let (tx, rx) = mpsc::channel();
    let ctx2 = ctx.clone();
    let rec2 = rec.clone();
    std::thread::spawn(move || {
        let _ = tx.send(process_row(&ctx2, &rec2, ratio));
    });
    match rx.recv_timeout(Duration::from_millis(ms)) {
        Ok(r) => r,
        Err(mpsc::RecvTimeoutError::Timeout) => Err(format!("timed out after {ms} ms")),
        Err(mpsc::RecvTimeoutError::Disconnected) => Err("row worker panicked".into()),
    }
}

fn load_registry(config: &RunConfig) -> Result<Registry, RunError> {
    match &config.registry {
        Some(path) => Ok(Registry::load(path)?),
        None => Ok(Registry::bundled()),
    }
}

/// Runs the configured evaluation. Endpoints that will be contacted are
/// probed before the first row; failures after that become row skips.
pub fn run_eval(config: &RunConfig) -> Result<EvalReport, RunError> {
    let registry = load_registry(config)?;
    let manifest = registry.get(&config.dataset)?.clone();
    config.validate(&manifest)?;
    if config.mode == Mode::ExtrinsicAnswer && !matches!(manifest.family, Family::Gsm8k | Family::Bbh | Family::LongBench) {
        return Err(RunError::Config(format!(
            "extrinsic_answer mode needs a dataset with gold answers; {} is a {} dataset",
            manifest.name, manifest.family
        )));
    }
    let mut records = registry.load_records(&manifest.name)?;
    if let Some(n) = config.max_rows {
        records.truncate(n);
    }

    let mut tapes = Tapes::default();
    let target_cfg = config
        .target_llm
        .as_ref()
        .ok_or_else(|| RunError::Config("missing [target_llm] section".into()))?;
    let target = build_llm("target LLM", target_cfg, &mut tapes)?;
    let scorer = build_scorer(&config.scorer, &records)?;
    let mut compressor = PromptCompressor::new(scorer).with_config(config.compressor.params.clone());
    if config.compressor.name == crate::contract::CompressorKind::Kis {
        let generator = match &config.generator {
            Some(g) => build_llm("generator", g, &mut tapes)?,
            None => target.clone(),
        };
        compressor = compressor.with_generator(generator);
    }
    let embedder = match (&config.embedder, config.metrics.contains(&MetricKind::BertScore)) {
        (Some(e), true) => Some(build_embedder(e, &mut tapes)?),
        _ => None,
    };

    let ctx = Arc::new(Context {
        compressor,
        target,
        embedder,
        config: config.clone(),
        task: manifest.task(),
    });
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.concurrency)
        .build()
        .map_err(|e| RunError::Config(e.to_string()))?;

    let mut sections = Vec::new();
    for ratio in config.ratio.values() {
        let outcomes: Vec<Result<Row, String>> = pool.install(|| {
            records
                .par_iter()
                .map(|rec| process_with_timeout(&ctx, rec, ratio))
                .collect()
        });
        let mut rows = Vec::new();
        let mut skips = Vec::new();
        for (rec, outcome) in records.iter().zip(outcomes) {
            match outcome {
                Ok(row) => rows.push(row),
                Err(reason) => {
                    log::warn!("row {} skipped: {reason}", rec.id);
                    skips.push(Skip {
                        id: rec.id.clone(),
                        reason,
                    });
                }
            }
        }
        sections.push(Section::new(ratio, rows, skips));
    }
    tapes.save()?;

    Ok(EvalReport {
        version: crate::VERSION.to_string(),
        timestamp: chrono::Utc::now().to_rfc3339(),
        config: config.clone(),
        dataset_size: records.len(),
        sections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &std::path::Path, name: &str, content: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(content.as_bytes()).unwrap();
        p
    }

    fn two_row_registry(dir: &std::path::Path) -> PathBuf {
        write(
            dir,
            "qa.jsonl",
            "{\"_id\":\"a\",\"context\":\"red fox runs\\n\\nblue bird sings\",\"input\":\"what runs?\",\"answers\":[\"fox\"]}\n\
             {\"_id\":\"b\",\"context\":\"the sun is hot\",\"input\":\"what is hot?\",\"answers\":[\"sun\"]}\n",
        );
        write(dir, "registry.toml", "[[dataset]]\nname = \"qa\"\nfamily = \"long_bench\"\npath = \"qa.jsonl\"\n")
    }

    fn echo_config(registry: &std::path::Path, extra: &str) -> RunConfig {
        RunConfig::from_toml(&format!(
            "mode = \"intrinsic_reconstruction\"\ndataset = \"qa\"\nmetrics = [\"edit_distance\"]\n\
             registry = {:?}\ntiming = false\n{extra}\n[compressor]\nname = \"Lingua\"\n\
             [target_llm]\nbase_url = \"\"\nmodel = \"echo\"\necho = true\n",
            registry.display().to_string()
        ))
        .unwrap()
    }

    #[test]
    fn echo_reconstruction_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let reg = two_row_registry(dir.path());
        let report = run_eval(&echo_config(&reg, "ratio = 0.0")).unwrap();
        let s = &report.sections[0];
        assert_eq!(s.rows.len(), 2);
        assert_eq!(s.aggregates.metrics["edit_distance"], 0.0);
    }

    #[test]
    fn one_section_per_ratio() {
        let dir = tempfile::tempdir().unwrap();
        let reg = two_row_registry(dir.path());
        let report = run_eval(&echo_config(&reg, "ratio = [0.1, 0.3]")).unwrap();
        assert_eq!(report.sections.len(), 2);
        assert_eq!(report.sections[1].ratio, 0.3);
        for s in &report.sections {
            assert_eq!(s.rows.len() + s.skips.len(), report.dataset_size);
        }
    }

    #[test]
    fn failing_rows_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let reg = two_row_registry(dir.path());
        let mut cfg = echo_config(&reg, "ratio = 0.5");
        cfg.compressor.name = crate::contract::CompressorKind::Lingua;
        // an empty replay cassette: every generation misses
        cfg.target_llm.as_mut().unwrap().echo = false;
        cfg.target_llm.as_mut().unwrap().cassette = Some(dir.path().join("tape.json"));
        cfg.target_llm.as_mut().unwrap().cassette_mode = CassetteMode::Replay;
        std::fs::write(dir.path().join("tape.json"), "{}").unwrap();
        let report = run_eval(&cfg).unwrap();
        let s = &report.sections[0];
        assert!(s.rows.is_empty());
        assert_eq!(s.skips.len(), 2);
        assert!(s.aggregates.empty);
        assert!(s.skips[0].reason.contains("no recorded response"));
    }

    #[test]
    fn unreachable_endpoint_fails_before_rows() {
        let dir = tempfile::tempdir().unwrap();
        let reg = two_row_registry(dir.path());
        let mut cfg = echo_config(&reg, "ratio = 0.5");
        let llm = cfg.target_llm.as_mut().unwrap();
        llm.echo = false;
        llm.endpoint.base_url = "http://127.0.0.1:9".into();
        llm.endpoint.timeout_ms = 500;
        llm.endpoint.max_retries = 0;
        let err = run_eval(&cfg).unwrap_err();
        assert!(matches!(err, RunError::Endpoint(_)));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn bad_pairing_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let reg = two_row_registry(dir.path());
        let mut cfg = echo_config(&reg, "ratio = 0.5");
        cfg.compressor.name = crate::contract::CompressorKind::Scrl;
        let err = run_eval(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn extrinsic_echo_extracts_answers() {
        let cfg = RunConfig::from_toml(
            "mode = \"extrinsic_answer\"\ndataset = \"bbh_boolean_expressions\"\nmetrics = [\"accuracy\"]\n\
             ratio = 0.0\ntiming = false\n[compressor]\nname = \"SelectiveContext\"\n\
             [target_llm]\nbase_url = \"\"\nmodel = \"m\"\necho = true\n",
        )
        .unwrap();
        let report = run_eval(&cfg).unwrap();
        let s = &report.sections[0];
        assert_eq!(s.rows.len(), report.dataset_size);
        // echoing "... True ... is" predicts the last boolean literal
        assert!(s.rows.iter().all(|r| r.prediction.as_deref().is_some_and(|p| p == "True" || p == "False")));
    }
}
