//! Blocking clients for OpenAI-compatible endpoints.
//!
//! Three surfaces are used by the toolkit: `/completions` with echoed
//! logprobs (remote scorer), `/chat/completions` (target LLM and the KiS
//! generator), and `/embeddings` (BERTScore). All share one transport that
//! bounds in-flight requests and retries 429/5xx with exponential backoff.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key. The key itself
    /// never appears in configuration.
    pub api_key_env: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: String::new(),
            model: String::new(),
            api_key_env: None,
            timeout_ms: 60_000,
            max_retries: 3,
            backoff_ms: 250,
            max_in_flight: 8,
        }
    }
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model: model.into(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), RemoteError> {
        if self.base_url.trim().is_empty() {
            return Err(RemoteError::Config("base_url must not be empty".into()));
        }
        if self.timeout_ms == 0 {
            return Err(RemoteError::Config("timeout_ms must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(RemoteError::Config("max_in_flight must be positive".into()));
        }
        Ok(())
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RemoteError {
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
    #[error("{endpoint}: transport error: {message}")]
    Transport { endpoint: String, message: String },
    #[error("{endpoint}: HTTP {status}: {body}")]
    Status {
        endpoint: String,
        status: u16,
        body: String,
    },
    #[error("{endpoint}: unexpected response: {message}")]
    Parse { endpoint: String, message: String },
    #[error("no recorded response for request {key}")]
    NotRecorded { key: String },
}

impl RemoteError {
    /// HTTP status reported by the upstream, if it got that far.
    pub fn status(&self) -> Option<u16> {
        match self {
            RemoteError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }

    fn parse(endpoint: &str, message: impl Into<String>) -> Self {
        RemoteError::Parse {
            endpoint: endpoint.to_string(),
            message: message.into(),
        }
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cond: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            free: Mutex::new(n),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cond.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cond.notify_one();
    }
}

/// Shared JSON-over-HTTP transport.
pub struct HttpClient {
    config: EndpointConfig,
    agent: ureq::Agent,
    permits: Semaphore,
}

impl HttpClient {
    pub fn new(config: EndpointConfig) -> Result<Self, RemoteError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let permits = Semaphore::new(config.max_in_flight);
        Ok(HttpClient {
            config,
            agent,
            permits,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn api_key(&self) -> Option<String> {
        self.config
            .api_key_env
            .as_deref()
            .and_then(|name| std::env::var(name).ok())
            .filter(|k| !k.is_empty())
    }

    /// POSTs `body` to `path`, retrying 429 and 5xx responses.
    pub fn post_json(&self, path: &str, body: &Value) -> Result<Value, RemoteError> {
        let endpoint = self.config.url(path);
        let key = self.api_key();
        let mut attempt = 0;
        loop {
            let outcome = {
                let _permit = self.permits.acquire();
                let mut req = self.agent.post(&endpoint);
                if let Some(key) = &key {
                    req = req.header("Authorization", format!("Bearer {key}"));
                }
                req.send_json(body)
            };
            let err = match outcome {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.body_mut().read_to_string().map_err(|e| {
                        RemoteError::Transport {
                            endpoint: endpoint.clone(),
                            message: e.to_string(),
                        }
                    })?;
                    if (200..300).contains(&status) {
                        return serde_json::from_str(&text)
                            .map_err(|e| RemoteError::parse(&endpoint, e.to_string()));
                    }
                    RemoteError::Status {
                        endpoint: endpoint.clone(),
                        status,
                        body: text.chars().take(512).collect(),
                    }
                }
                Err(e) => RemoteError::Transport {
                    endpoint: endpoint.clone(),
                    message: e.to_string(),
                },
            };
            let retryable = matches!(err.status(), Some(429) | Some(500..=599));
            if !retryable || attempt >= self.config.max_retries {
                return Err(err);
            }
            let delay = self.config.backoff_ms.saturating_mul(1 << attempt.min(16));
            log::warn!("{err}; retrying in {delay} ms");
            std::thread::sleep(Duration::from_millis(delay));
            attempt += 1;
        }
    }

    /// Checks that the endpoint answers at all (any HTTP status counts).
    pub fn probe(&self) -> Result<(), RemoteError> {
        let endpoint = self.config.url("models");
        match self.agent.get(&endpoint).call() {
            Ok(_) => Ok(()),
            Err(e) => Err(RemoteError::Transport {
                endpoint,
                message: e.to_string(),
            }),
        }
    }
}

/// A chat or completion request for a text generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub prompt: String,
    pub n: usize,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        GenerationRequest {
            system: None,
            prompt: prompt.into(),
            n: 1,
            temperature: 0.0,
            max_tokens: None,
            seed: None,
        }
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system = Some(system.into());
        self
    }
}

/// Anything that turns a prompt into `n` candidate texts.
pub trait TextGenerator: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<String>, RemoteError>;

    /// Identifies the model for cassette keys.
    fn model_id(&self) -> String {
        String::new()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApiMode {
    #[default]
    Chat,
    Completion,
}

/// OpenAI-compatible generator, chat mode by default.
pub struct OpenAiGenerator {
    http: HttpClient,
    mode: ApiMode,
}

impl OpenAiGenerator {
    pub fn new(config: EndpointConfig, mode: ApiMode) -> Result<Self, RemoteError> {
        Ok(OpenAiGenerator {
            http: HttpClient::new(config)?,
            mode,
        })
    }

    pub fn probe(&self) -> Result<(), RemoteError> {
        self.http.probe()
    }
}

impl TextGenerator for OpenAiGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<String>, RemoteError> {
        let model = &self.http.config().model;
        let (path, mut body) = match self.mode {
            ApiMode::Chat => {
                let mut messages = Vec::new();
                if let Some(system) = &request.system {
                    messages.push(json!({"role": "system", "content": system}));
                }
                messages.push(json!({"role": "user", "content": request.prompt}));
                (
                    "chat/completions",
                    json!({"model": model, "messages": messages}),
                )
            }
            ApiMode::Completion => {
                let prompt = match &request.system {
                    Some(system) => format!("{system}\n\n{}", request.prompt),
                    None => request.prompt.clone(),
                };
                ("completions", json!({"model": model, "prompt": prompt}))
            }
        };
        body["n"] = json!(request.n.max(1));
        body["temperature"] = json!(request.temperature);
        if let Some(max_tokens) = request.max_tokens {
            body["max_tokens"] = json!(max_tokens);
        }
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        let resp = self.http.post_json(path, &body)?;
        let endpoint = self.http.config().url(path);
        let choices = resp["choices"]
            .as_array()
            .ok_or_else(|| RemoteError::parse(&endpoint, "missing choices array"))?;
        let texts = choices
            .iter()
            .map(|c| match self.mode {
                ApiMode::Chat => c["message"]["content"].as_str(),
                ApiMode::Completion => c["text"].as_str(),
            })
            .map(|t| t.map(str::to_string))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| RemoteError::parse(&endpoint, "choice without text"))?;
        Ok(texts)
    }

    fn model_id(&self) -> String {
        self.http.config().model.clone()
    }
}

/// Per-token logprobs of an echoed prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoLogprobs {
    pub tokens: Vec<String>,
    /// `None` for the first token, which the API cannot score.
    pub logprobs: Vec<Option<f64>>,
    /// Character offsets into the prompt.
    pub offsets: Vec<usize>,
}

/// Requests `{model, prompt, max_tokens: 0, logprobs: true, echo: true}`.
pub fn echo_logprobs(http: &HttpClient, prompt: &str) -> Result<EchoLogprobs, RemoteError> {
    let body = json!({
        "model": http.config().model,
        "prompt": prompt,
        "max_tokens": 0,
        "logprobs": true,
        "echo": true,
    });
    let resp = http.post_json("completions", &body)?;
    let endpoint = http.config().url("completions");
    let lp = &resp["choices"][0]["logprobs"];
    let tokens = lp["tokens"]
        .as_array()
        .ok_or_else(|| RemoteError::parse(&endpoint, "missing logprobs.tokens"))?
        .iter()
        .map(|t| t.as_str().map(str::to_string))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| RemoteError::parse(&endpoint, "non-string token"))?;
    let logprobs: Vec<Option<f64>> = lp["token_logprobs"]
        .as_array()
        .ok_or_else(|| RemoteError::parse(&endpoint, "missing logprobs.token_logprobs"))?
        .iter()
        .map(Value::as_f64)
        .collect();
    let offsets = match lp["text_offset"].as_array() {
        Some(arr) => arr
            .iter()
            .map(|v| v.as_u64().map(|o| o as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| RemoteError::parse(&endpoint, "bad text_offset"))?,
        None => {
            // Derive offsets by concatenation when the server omits them.
            let mut acc = 0;
            tokens
                .iter()
                .map(|t| {
                    let o = acc;
                    acc += t.chars().count();
                    o
                })
                .collect()
        }
    };
    if logprobs.len() != tokens.len() || offsets.len() != tokens.len() {
        return Err(RemoteError::parse(&endpoint, "logprob arrays differ in length"));
    }
    Ok(EchoLogprobs {
        tokens,
        logprobs,
        offsets,
    })
}

/// Text to vector embeddings.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RemoteError>;
}

pub struct OpenAiEmbedder {
    http: HttpClient,
}

impl OpenAiEmbedder {
    pub fn new(config: EndpointConfig) -> Result<Self, RemoteError> {
        Ok(OpenAiEmbedder {
            http: HttpClient::new(config)?,
        })
    }

    pub fn probe(&self) -> Result<(), RemoteError> {
        self.http.probe()
    }
}

impl Embedder for OpenAiEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RemoteError> {
        let body = json!({"model": self.http.config().model, "input": texts});
        let resp = self.http.post_json("embeddings", &body)?;
        let endpoint = self.http.config().url("embeddings");
        let data = resp["data"]
            .as_array()
            .ok_or_else(|| RemoteError::parse(&endpoint, "missing data array"))?;
        let mut out = vec![Vec::new(); texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let index = item["index"].as_u64().map(|i| i as usize).unwrap_or(pos);
            let vector = item["embedding"]
                .as_array()
                .and_then(|v| v.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
                .ok_or_else(|| RemoteError::parse(&endpoint, "bad embedding vector"))?;
            if index >= out.len() {
                return Err(RemoteError::parse(&endpoint, "embedding index out of range"));
            }
            out[index] = vector;
        }
        if out.iter().any(Vec::is_empty) {
            return Err(RemoteError::parse(&endpoint, "missing embeddings"));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_config() {
        assert!(HttpClient::new(EndpointConfig::default()).is_err());
        let mut cfg = EndpointConfig::new("http://localhost:1", "m");
        cfg.timeout_ms = 0;
        assert!(HttpClient::new(cfg).is_err());
    }

    #[test]
    fn url_joining() {
        let cfg = EndpointConfig::new("http://h/v1/", "m");
        assert_eq!(cfg.url("completions"), "http://h/v1/completions");
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        let mut cfg = EndpointConfig::new("http://127.0.0.1:9", "m");
        cfg.timeout_ms = 500;
        cfg.max_retries = 0;
        let client = HttpClient::new(cfg).unwrap();
        let err = client.post_json("completions", &json!({})).unwrap_err();
        assert!(matches!(err, RemoteError::Transport { .. }), "{err:?}");
        assert_eq!(err.status(), None);
    }
}
