use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::compressors::CompressorConfig;
use crate::contract::CompressorKind;
use crate::datasets::DatasetManifest;
use crate::metrics::MetricKind;
use crate::remote::{ApiMode, EndpointConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    IntrinsicReconstruction,
    IntrinsicSummarization,
    ExtrinsicAnswer,
}

/// One ratio or a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Ratios {
    One(f64),
    Many(Vec<f64>),
}

impl Ratios {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Ratios::One(r) => vec![*r],
            Ratios::Many(rs) => rs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressorSection {
    pub name: CompressorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_length: Option<usize>,
    #[serde(flatten)]
    pub params: CompressorConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CassetteMode {
    /// Serve recorded responses; a miss is an error and no endpoint is
    /// contacted.
    Replay,
    /// Always call the endpoint and store the response.
    Record,
    /// Replay hits, record misses.
    #[default]
    Auto,
}

/// A remote text generator (target LLM or KiS generator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    #[serde(flatten)]
    pub endpoint: EndpointConfig,
    #[serde(default)]
    pub api: ApiMode,
    /// Answer every request with its own prompt instead of calling out.
    #[serde(default)]
    pub echo: bool,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cassette: Option<PathBuf>,
    #[serde(default)]
    pub cassette_mode: CassetteMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    #[serde(flatten)]
    pub endpoint: EndpointConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cassette: Option<PathBuf>,
    #[serde(default)]
    pub cassette_mode: CassetteMode,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerCorpus {
    /// Sources (and questions) of the dataset under evaluation.
    #[default]
    Dataset,
    /// The small background corpus shipped with the toolkit.
    Bundled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerConfig {
    Ngram {
        #[serde(default = "default_order")]
        order: usize,
        #[serde(default = "default_k")]
        smoothing_k: f64,
        #[serde(default)]
        corpus: ScorerCorpus,
    },
    Remote {
        #[serde(flatten)]
        endpoint: EndpointConfig,
    },
}

fn default_order() -> usize {
    2
}

fn default_k() -> f64 {
    0.1
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig::Ngram {
            order: default_order(),
            smoothing_k: default_k(),
            corpus: ScorerCorpus::Dataset,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub format: ReportFormat,
}

fn default_seed() -> u64 {
    0
}

fn default_concurrency() -> usize {
    4
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub dataset: String,
    pub metrics: Vec<MetricKind>,
    pub ratio: Ratios,
    pub compressor: CompressorSection,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_timeout_ms: Option<u64>,
    /// Use only the first `max_rows` records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rows: Option<usize>,
    /// Record per-row latency. Turn off for reports that must be
    /// reproducible byte for byte.
    #[serde(default = "default_true")]
    pub timing: bool,
    /// Dataset registry file; the bundled fixtures when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry: Option<PathBuf>,
    #[serde(default)]
    pub scorer: ScorerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_llm: Option<LlmConfig>,
    /// KiS generator; falls back to `target_llm`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<LlmConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder: Option<EmbedderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

/// Environment variables that override endpoint settings, as
/// `(variable, section, field)`.
pub const ENV_OVERRIDES: [(&str, &str, &str); 8] = [
    ("PCT_LLM_BASE_URL", "target_llm", "base_url"),
    ("PCT_LLM_API_KEY_ENV", "target_llm", "api_key_env"),
    ("PCT_GENERATOR_BASE_URL", "generator", "base_url"),
    ("PCT_GENERATOR_API_KEY_ENV", "generator", "api_key_env"),
    ("PCT_EMBEDDER_BASE_URL", "embedder", "base_url"),
    ("PCT_EMBEDDER_API_KEY_ENV", "embedder", "api_key_env"),
    ("PCT_SCORER_BASE_URL", "scorer", "base_url"),
    ("PCT_SCORER_API_KEY_ENV", "scorer", "api_key_env"),
];

fn apply(endpoint: &mut EndpointConfig, field: &str, value: String) {
    match field {
        "base_url" => endpoint.base_url = value,
        _ => endpoint.api_key_env = Some(value),
    }
}

impl RunConfig {
    pub fn from_toml(content: &str) -> Result<Self, RunError> {
        toml::from_str(content).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, RunError> {
        let content = std::fs::read_to_string(path).map_err(|source| RunError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&content)?;
        // relative file references are taken from the config's directory
        let dir = path.parent().map(std::path::Path::to_path_buf).unwrap_or_default();
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let Some(r) = config.registry.as_mut() {
            rebase(r);
        }
        for llm in [config.target_llm.as_mut(), config.generator.as_mut()].into_iter().flatten() {
            if let Some(c) = llm.cassette.as_mut() {
                rebase(c);
            }
        }
        if let Some(c) = config.embedder.as_mut().and_then(|e| e.cassette.as_mut()) {
            rebase(c);
        }
        if let Some(o) = config.output.as_mut() {
            rebase(&mut o.path);
        }
        Ok(config)
    }

    /// Applies [`ENV_OVERRIDES`] using `lookup` (normally `std::env::var`).
    /// Only sections present in the config are touched.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        for (var, section, field) in ENV_OVERRIDES {
            let Some(value) = lookup(var).filter(|v| !v.is_empty()) else {
                continue;
            };
            let endpoint = match section {
                "target_llm" => self.target_llm.as_mut().map(|l| &mut l.endpoint),
                "generator" => self.generator.as_mut().map(|l| &mut l.endpoint),
                "embedder" => self.embedder.as_mut().map(|e| &mut e.endpoint),
                _ => match &mut self.scorer {
                    ScorerConfig::Remote { endpoint } => Some(endpoint),
                    ScorerConfig::Ngram { .. } => None,
                },
            };
            if let Some(endpoint) = endpoint {
                apply(endpoint, field, value);
            }
        }
    }

    /// The generator KiS should use.
    pub fn generator_config(&self) -> Option<&LlmConfig> {
        self.generator.as_ref().or(self.target_llm.as_ref())
    }

    /// Checks the config against itself and the dataset's family.
    pub fn validate(&self, manifest: &DatasetManifest) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        let ratios = self.ratio.values();
        if ratios.is_empty() {
            return bad("ratio list is empty".into());
        }
        if let Some(r) = ratios.iter().find(|r| !(r.is_finite() && (0.0..1.0).contains(*r))) {
            return bad(format!("ratio {r} is outside [0, 1)"));
        }
        if self.concurrency == 0 {
            return bad("concurrency must be at least 1".into());
        }
        if self.metrics.is_empty() {
            return bad("no metrics requested".into());
        }
        let family = manifest.family;
        for m in &self.metrics {
            if !family.metrics().contains(m) {
                return bad(format!(
                    "metric {m} is not supported for dataset {} ({family} family supports {})",
                    manifest.name,
                    family.metrics().iter().map(|m| m.name()).collect::<Vec<_>>().join(", ")
                ));
            }
        }
        let kind = self.compressor.name;
        if !family.compressors().contains(&kind) {
            return bad(format!("compressor {kind} is not supported for dataset {} ({family} family)", manifest.name));
        }
        if self.target_llm.is_none() {
            let what = match self.mode {
                Mode::ExtrinsicAnswer => "extrinsic_answer",
                Mode::IntrinsicReconstruction => "intrinsic_reconstruction",
                Mode::IntrinsicSummarization => "intrinsic_summarization",
            };
            return bad(format!("{what} mode needs a [target_llm] section"));
        }
        if kind == CompressorKind::Kis && self.generator_config().is_none() {
            return bad("KiS needs a [generator] (or [target_llm]) section".into());
        }
        for llm in [self.target_llm.as_ref(), self.generator.as_ref()].into_iter().flatten() {
            let replay_only = llm.cassette.is_some() && llm.cassette_mode == CassetteMode::Replay;
            if !llm.echo && !replay_only && llm.endpoint.base_url.trim().is_empty() {
                return bad("an LLM section needs base_url (or echo = true, or a replay cassette)".into());
            }
        }
        if let ScorerConfig::Ngram { order, smoothing_k, .. } = &self.scorer {
            if !(1..=3).contains(order) || !(smoothing_k.is_finite() && *smoothing_k > 0.0) {
                return bad("n-gram scorer needs order 1-3 and smoothing_k > 0".into());
            }
        }
        Ok(())
    }
}
