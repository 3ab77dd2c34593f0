//! Service configuration and the compressor it builds.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use pct_core::compressors::CompressorConfig;
use pct_core::remote::{OpenAiGenerator, TextGenerator};
use pct_core::runner::{EchoGenerator, LlmConfig, RunError, ScorerConfig, BUNDLED_CORPUS};
use pct_core::scorer::RemoteScorer;
use pct_core::{fit_ngram, PromptCompressor, Scorer};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Allowed CORS origins; any origin when empty.
    pub origins: Vec<String>,
    /// For an n-gram scorer the `corpus` option is ignored: it is fit on
    /// `corpus_file` or, failing that, the bundled background corpus.
    pub scorer: ScorerConfig,
    /// One document per line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_file: Option<PathBuf>,
    /// Generation endpoint for KiS. Without it KiS is reported unavailable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<LlmConfig>,
    pub compressors: CompressorConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            origins: Vec::new(),
            scorer: ScorerConfig::default(),
            corpus_file: None,
            generator: None,
            compressors: CompressorConfig::default(),
        }
    }
}

fn io_error(path: &Path, source: std::io::Error) -> RunError {
    RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl ServiceConfig {
    pub fn from_toml(content: &str) -> Result<Self, RunError> {
        toml::from_str(content).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let content = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let mut cfg = Self::from_toml(&content)?;
        if let Some(c) = cfg.corpus_file.as_mut().filter(|c| c.is_relative()) {
            *c = path.parent().unwrap_or(Path::new("")).join(&*c);
        }
        Ok(cfg)
    }

    /// Endpoint URLs, key variables and origins from the environment.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        let get = |k: &str| lookup(k).filter(|v| !v.is_empty());
        if let ScorerConfig::Remote { endpoint } = &mut self.scorer {
            if let Some(v) = get("PCT_SCORER_BASE_URL") {
                endpoint.base_url = v;
            }
            if let Some(v) = get("PCT_SCORER_API_KEY_ENV") {
                endpoint.api_key_env = Some(v);
            }
        }
        if let Some(g) = self.generator.as_mut() {
            if let Some(v) = get("PCT_GENERATOR_BASE_URL") {
                g.endpoint.base_url = v;
            }
            if let Some(v) = get("PCT_GENERATOR_API_KEY_ENV") {
                g.endpoint.api_key_env = Some(v);
            }
        }
        if let Some(v) = get("PCT_SERVICE_ORIGINS") {
            self.origins = v.split(',').map(|o| o.trim().to_string()).filter(|o| !o.is_empty()).collect();
        }
    }

    fn scorer(&self) -> Result<Arc<dyn Scorer>, RunError> {
        match &self.scorer {
            ScorerConfig::Ngram { order, smoothing_k, .. } => {
                let owned;
                let text = match &self.corpus_file {
                    Some(path) => {
                        owned = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
                        owned.as_str()
                    }
                    None => BUNDLED_CORPUS,
                };
                let docs: Vec<&str> = text.lines().collect();
                let model = fit_ngram(&docs, *order, *smoothing_k).map_err(|e| RunError::Config(e.to_string()))?;
                Ok(Arc::new(model))
            }
            ScorerConfig::Remote { endpoint } => {
                let s = RemoteScorer::new(endpoint.clone()).map_err(|e| RunError::Config(e.to_string()))?;
                s.probe().map_err(|e| RunError::Endpoint(format!("scorer: {e}")))?;
                Ok(Arc::new(s))
            }
        }
    }

    fn generator(&self) -> Result<Option<Arc<dyn TextGenerator>>, RunError> {
        let Some(g) = &self.generator else {
            return Ok(None);
        };
        if g.cassette.is_some() {
            return Err(RunError::Config("cassettes are only supported by eval runs".into()));
        }
        if g.echo {
            return Ok(Some(Arc::new(EchoGenerator)));
        }
        let gen = OpenAiGenerator::new(g.endpoint.clone(), g.api).map_err(|e| RunError::Config(e.to_string()))?;
        gen.probe().map_err(|e| RunError::Endpoint(format!("generator: {e}")))?;
        Ok(Some(Arc::new(gen)))
    }

    /// Fits or connects the scorer and, when configured, the generator.
    pub fn build_compressor(&self) -> Result<PromptCompressor, RunError> {
        let mut c = PromptCompressor::new(self.scorer()?).with_config(self.compressors.clone());
        if let Some(g) = self.generator()? {
            c = c.with_generator(g);
        }
        Ok(c)
    }
}
