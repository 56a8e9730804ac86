//! Provenance record embedded in every metric document.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL_NAME: &str = "gencorr";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Content hash of one input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputHash {
    pub role: String,
    /// File path as given, or `bundled:<name>` for data shipped in the crate.
    pub source: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub model_ids: Vec<String>,
    pub inputs: Vec<InputHash>,
    /// RFC 3339 UTC. Taken from `SOURCE_DATE_EPOCH` when set so reruns can
    /// be byte-identical.
    pub created: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(sha256_hex(&bytes))
}

/// Current time, or `SOURCE_DATE_EPOCH` seconds when that variable is set.
pub fn timestamp() -> String {
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<u64>().ok())
        .map(|secs| UNIX_EPOCH + Duration::from_secs(secs))
        .unwrap_or_else(SystemTime::now);
    humantime::format_rfc3339_seconds(now).to_string()
}

impl RunManifest {
    pub fn new(command: Vec<String>) -> Self {
        RunManifest {
            tool: TOOL_NAME.into(),
            tool_version: TOOL_VERSION.into(),
            command,
            seeds: BTreeMap::new(),
            model_ids: Vec::new(),
            inputs: Vec::new(),
            created: timestamp(),
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) -> &mut Self {
        self.seeds.insert(name.into(), value);
        self
    }

    pub fn model(&mut self, id: &str) -> &mut Self {
        if !self.model_ids.iter().any(|m| m == id) {
            self.model_ids.push(id.into());
        }
        self
    }

    pub fn input_file(&mut self, role: &str, path: &Path) -> Result<&mut Self> {
        let sha256 = hash_file(path)?;
        self.inputs.push(InputHash {
            role: role.into(),
            source: path.display().to_string(),
            sha256,
        });
        Ok(self)
    }

    pub fn input_bytes(&mut self, role: &str, source: &str, bytes: &[u8]) -> &mut Self {
        self.inputs.push(InputHash {
            role: role.into(),
            source: source.into(),
            sha256: sha256_hex(bytes),
        });
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_known_value() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn timestamp_shape() {
        let t = timestamp();
        assert!(t.ends_with('Z') && t.len() == 20, "{t}");
    }
}
