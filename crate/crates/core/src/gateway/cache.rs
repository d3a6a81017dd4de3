//! Content-addressed response cache.
//!
//! Greedy decoding makes a response a function of the request, so a cached
//! body can stand in for a live call and whole runs replay byte-for-byte.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Message, RoleConfig, Usage};

/// What is stored per request: the unsanitized response plus call metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub raw_response: String,
    pub usage: Usage,
    pub latency_ms: u64,
    pub attempts: u32,
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model_name: &'a str,
    messages: &'a [Message],
    max_output_tokens: u32,
    thinking_enabled: bool,
}

/// Hex SHA-256 over (model name, messages, max tokens, thinking flag).
pub fn cache_key(config: &RoleConfig, messages: &[Message]) -> String {
    let material = KeyMaterial {
        model_name: &config.model_name,
        messages,
        max_output_tokens: config.max_output_tokens,
        thinking_enabled: config.thinking_enabled,
    };
    let bytes = serde_json::to_vec(&material).expect("key material serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    /// Returns `None` on a miss. An unreadable entry is treated as a miss.
    pub fn get(&self, key: &str) -> Option<CachedResponse> {
        let bytes = fs::read(self.path_for(key)).ok()?;
        match serde_json::from_slice(&bytes) {
            Ok(entry) => Some(entry),
            Err(e) => {
                tracing::warn!(key, error = %e, "ignoring corrupt cache entry");
                None
            }
        }
    }

    pub fn put(&self, key: &str, entry: &CachedResponse) -> io::Result<()> {
        let path = self.path_for(key);
        let parent = path.parent().expect("cache path has a parent");
        fs::create_dir_all(parent)?;
        let tmp = parent.join(format!(".{key}.{}.tmp", std::process::id()));
        fs::write(&tmp, serde_json::to_vec_pretty(entry)?)?;
        fs::rename(tmp, path)
    }
}
