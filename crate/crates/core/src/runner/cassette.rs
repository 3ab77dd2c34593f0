//! Record/replay store for remote LLM traffic.
//!
//! Responses are keyed by the SHA-256 of the canonical JSON of the request
//! (including the model id), so a replayed run sees exactly the responses
//! the recorded run saw, in any order and from any thread.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::config::CassetteMode;
use super::RunError;
use crate::remote::{Embedder, GenerationRequest, RemoteError, TextGenerator};

pub struct Cassette {
    path: PathBuf,
    mode: CassetteMode,
    entries: RwLock<BTreeMap<String, Value>>,
    dirty: RwLock<bool>,
}

/// Hex SHA-256 of `value`'s canonical (sorted-key) JSON.
pub fn request_key(value: &impl Serialize) -> String {
    let canonical = serde_json::to_value(value)
        .and_then(|v| serde_json::to_string(&v))
        .unwrap_or_default();
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

impl Cassette {
    /// Opens `path`. A missing file is an empty cassette unless the mode is
    /// replay.
    pub fn open(path: &Path, mode: CassetteMode) -> Result<Self, RunError> {
        let entries = match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| {
                RunError::Cassette(format!("{}: {e}", path.display()))
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && mode != CassetteMode::Replay => {
                BTreeMap::new()
            }
            Err(source) => {
                return Err(RunError::Io {
                    path: path.to_path_buf(),
                    source,
                })
            }
        };
        Ok(Cassette {
            path: path.to_path_buf(),
            mode,
            entries: RwLock::new(entries),
            dirty: RwLock::new(false),
        })
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.read().map(|e| e.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lookup(&self, key: &str) -> Option<Value> {
        if self.mode == CassetteMode::Record {
            return None;
        }
        self.entries.read().ok()?.get(key).cloned()
    }

    fn store(&self, key: String, value: Value) {
        if let Ok(mut e) = self.entries.write() {
            e.insert(key, value);
        }
        if let Ok(mut d) = self.dirty.write() {
            *d = true;
        }
    }

    /// Serves `key` from the tape or computes it with `call`.
    pub fn through<T, F>(&self, key: String, call: F) -> Result<T, RemoteError>
    where
        T: Serialize + serde::de::DeserializeOwned,
        F: FnOnce() -> Result<T, RemoteError>,
    {
        if let Some(v) = self.lookup(&key) {
            return serde_json::from_value(v).map_err(|e| RemoteError::Parse {
                endpoint: self.path.display().to_string(),
                message: e.to_string(),
            });
        }
        if self.mode == CassetteMode::Replay {
            return Err(RemoteError::NotRecorded { key });
        }
        let out = call()?;
        if let Ok(v) = serde_json::to_value(&out) {
            self.store(key, v);
        }
        Ok(out)
    }

    /// Writes the tape back if anything was recorded.
    pub fn save(&self) -> Result<(), RunError> {
        let dirty = self.dirty.read().map(|d| *d).unwrap_or(false);
        if !dirty {
            return Ok(());
        }
        let entries = self
            .entries
            .read()
            .map_err(|_| RunError::Cassette("cassette lock poisoned".into()))?;
        let text = serde_json::to_string_pretty(&*entries)
            .map_err(|e| RunError::Cassette(e.to_string()))?;
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|source| RunError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
        }
        std::fs::write(&self.path, text + "\n").map_err(|source| RunError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

#[derive(Serialize)]
struct GenerationKey<'a> {
    kind: &'static str,
    model: String,
    request: &'a GenerationRequest,
}

/// A generator whose traffic goes through a cassette. `inner` may be absent
/// for replay-only use.
pub struct CassetteGenerator {
    pub inner: Option<Arc<dyn TextGenerator>>,
    pub model: String,
    pub cassette: Arc<Cassette>,
}

impl TextGenerator for CassetteGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<String>, RemoteError> {
        let key = request_key(&GenerationKey {
            kind: "generate",
            model: self.model.clone(),
            request,
        });
        self.cassette.through(key.clone(), || match &self.inner {
            Some(g) => g.generate(request),
            None => Err(RemoteError::NotRecorded { key }),
        })
    }

    fn model_id(&self) -> String {
        self.model.clone()
    }
}

pub struct CassetteEmbedder {
    pub inner: Option<Arc<dyn Embedder>>,
    pub model: String,
    pub cassette: Arc<Cassette>,
}

impl Embedder for CassetteEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RemoteError> {
        let key = request_key(&serde_json::json!({
            "kind": "embed",
            "model": self.model,
            "input": texts,
        }));
        self.cassette.through(key.clone(), || match &self.inner {
            Some(e) => e.embed(texts),
            None => Err(RemoteError::NotRecorded { key }),
        })
    }
}

/// Replies with the prompt itself, once per requested candidate.
pub struct EchoGenerator;

impl TextGenerator for EchoGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<String>, RemoteError> {
        Ok(vec![request.prompt.clone(); request.n.max(1)])
    }

    fn model_id(&self) -> String {
        "echo".into()
    }
}
