//! Content-addressed response cache: one JSON envelope per request digest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatRequest, GatewayError, Role};

#[derive(Serialize)]
struct KeyMaterial<'a> {
    v: u32,
    model_id: &'a str,
    messages: Vec<(Role, &'a str)>,
    temperature: f64,
    max_tokens: u32,
}

/// SHA-256 (hex) over model id, messages, temperature and max_tokens.
pub fn cache_key(request: &ChatRequest) -> String {
    let material = KeyMaterial {
        v: 1,
        model_id: &request.model_id,
        messages: request.messages.iter().map(|m| (m.role, m.content.as_str())).collect(),
        temperature: request.temperature,
        max_tokens: request.max_tokens,
    };
    let bytes = serde_json::to_vec(&material).expect("key material serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEnvelope {
    pub request_digest: String,
    pub content: String,
    pub model_id: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

#[derive(Debug)]
pub struct DiskCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl DiskCache {
    pub fn new(dir: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| GatewayError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(DiskCache { dir, write_lock: Mutex::new(()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CacheEnvelope>, GatewayError> {
        let path = self.path_for(key);
        let raw = match fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Cache(format!("{}: {e}", path.display()))),
        };
        let envelope: CacheEnvelope = serde_json::from_str(&raw)
            .map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))?;
        if envelope.request_digest != key {
            return Err(GatewayError::Cache(format!("{}: digest mismatch", path.display())));
        }
        Ok(Some(envelope))
    }

    pub fn put(&self, key: &str, request: &ChatRequest, content: &str) -> Result<(), GatewayError> {
        let envelope = CacheEnvelope {
            request_digest: key.to_string(),
            content: content.to_string(),
            model_id: request.model_id.clone(),
            created_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        };
        let body = serde_json::to_string_pretty(&envelope).expect("envelope serializes");
        let path = self.path_for(key);
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        if path.exists() {
            // identical key means identical request; the stored content wins
            return Ok(());
        }
        let tmp = self.dir.join(format!(".{key}.{}.tmp", std::process::id()));
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(body.as_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        };
        write().map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ChatMessage;

    fn request(text: &str) -> ChatRequest {
        ChatRequest::new("gpt-4o", vec![ChatMessage::user(text)])
    }

    #[test]
    fn key_is_deterministic_and_sensitive() {
        assert_eq!(cache_key(&request("abc")), cache_key(&request("abc")));
        assert_ne!(cache_key(&request("abc")), cache_key(&request("abd")));
        let mut r = request("abc");
        r.temperature = 0.5;
        assert_ne!(cache_key(&r), cache_key(&request("abc")));
        let mut r = request("abc");
        r.max_tokens = 100;
        assert_ne!(cache_key(&r), cache_key(&request("abc")));
    }

    #[test]
    fn key_ignores_non_wire_fields() {
        let mut r = request("abc");
        r.purpose = crate::gateway::CallPurpose::Analysis;
        assert_eq!(cache_key(&r), cache_key(&request("abc")));
    }

    #[test]
    fn golden_key() {
        let req = ChatRequest::new(
            "gpt-4o",
            vec![ChatMessage::user("Please classify the following economic phenomenon.")],
        );
        assert_eq!(cache_key(&req), GOLDEN_KEY);
    }

    // sha256 of the compact JSON key material, computed outside Rust
    const GOLDEN_KEY: &str = "7438b4022011a8f5e7db82d7f83f3d274c1612eb00900b487426c4e1cbd7dcf2";

    #[test]
    fn store_and_load_envelope() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path()).unwrap();
        let req = request("q");
        let key = cache_key(&req);
        assert!(cache.get(&key).unwrap().is_none());
        cache.put(&key, &req, "").unwrap();
        let env = cache.get(&key).unwrap().unwrap();
        assert_eq!(env.content, "");
        assert_eq!(env.model_id, "gpt-4o");
        assert_eq!(env.request_digest, key);
        // second write keeps the first content
        cache.put(&key, &req, "other").unwrap();
        assert_eq!(cache.get(&key).unwrap().unwrap().content, "");
    }
}
