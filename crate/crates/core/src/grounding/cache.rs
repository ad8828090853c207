//! Append-only response cache.
//!
//! One JSON record per line. The key is the SHA-256 of the model name,
//! template id and prompt; a later record with the same key replaces an
//! earlier one when the file is read back.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GroundingError, LlmParams, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub model: String,
    pub endpoint: String,
    pub template_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub prompt: String,
    pub response: String,
}

pub fn cache_key(model: &str, template_id: &str, prompt: &str) -> String {
    let mut h = Sha256::new();
    for part in [model, template_id, prompt] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

impl CacheRecord {
    pub fn new(endpoint: &str, template_id: &str, params: &LlmParams, prompt: &str, response: &str) -> Self {
        Self {
            key: cache_key(&params.model, template_id, prompt),
            model: params.model.clone(),
            endpoint: endpoint.to_string(),
            template_id: template_id.to_string(),
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            prompt: prompt.to_string(),
            response: response.to_string(),
        }
    }
}

/// Concurrent reads, serialized appends.
#[derive(Debug)]
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, String>>,
    writer: Mutex<Option<File>>,
}

impl ResponseCache {
    /// A cache that lives only in memory.
    pub fn in_memory() -> Self {
        Self { path: None, entries: RwLock::new(HashMap::new()), writer: Mutex::new(None) }
    }

    /// Opens (or lazily creates, on first insert) the cache file at `path`.
    pub fn open(path: &Path) -> Result<Self> {
        let cache = Self { path: Some(path.to_path_buf()), ..Self::in_memory() };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(cache.error(e.to_string())),
        };
        let mut entries = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: CacheRecord =
                serde_json::from_str(line).map_err(|e| cache.error(format!("line {}: {e}", n + 1)))?;
            if rec.key != cache_key(&rec.model, &rec.template_id, &rec.prompt) {
                return Err(cache.error(format!("line {}: key does not match its request", n + 1)));
            }
            entries.insert(rec.key, rec.response);
        }
        *cache.entries.write().unwrap() = entries;
        Ok(cache)
    }

    fn error(&self, message: String) -> GroundingError {
        let path = self.path.clone().unwrap_or_default();
        GroundingError::Cache { path, message }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.read().unwrap().get(key).cloned()
    }

    /// Appends `rec` to the file (if any) and makes it visible to readers.
    pub fn insert(&self, rec: CacheRecord) -> Result<()> {
        let mut writer = self.writer.lock().unwrap();
        if let Some(path) = &self.path {
            if writer.is_none() {
                let f =
                    OpenOptions::new().create(true).append(true).open(path).map_err(|e| self.error(e.to_string()))?;
                *writer = Some(f);
            }
            let mut line = serde_json::to_string(&rec).expect("cache record serializes");
            line.push('\n');
            let f = writer.as_mut().expect("opened above");
            f.write_all(line.as_bytes()).and_then(|_| f.flush()).map_err(|e| self.error(e.to_string()))?;
        }
        self.entries.write().unwrap().insert(rec.key, rec.response);
        Ok(())
    }
}
