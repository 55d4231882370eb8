use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HdynError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written into every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config_path: PathBuf,
    /// SHA-256 of the config file bytes, lowercase hex.
    pub config_sha256: String,
    pub seed: u64,
    pub tool_version: String,
    pub output_dir: PathBuf,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    /// Hashes `config_path` as it is on disk now.
    pub fn new(command: Vec<String>, config_path: &Path, seed: u64, output_dir: &Path, started_at: u64) -> Result<Self> {
        let bytes = std::fs::read(config_path).map_err(|e| HdynError::io(config_path, e))?;
        Ok(RunManifest {
            command,
            config_path: config_path.to_path_buf(),
            config_sha256: sha256_hex(&bytes),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            output_dir: output_dir.to_path_buf(),
            started_at,
            finished_at: unix_now(),
        })
    }

    pub fn write(&self) -> Result<()> {
        let path = self.output_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| HdynError::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| HdynError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| HdynError::parse(&path, e.to_string()))
    }

    /// Whether the config file still hashes to the recorded value.
    pub fn verify(&self) -> Result<bool> {
        let bytes = std::fs::read(&self.config_path).map_err(|e| HdynError::io(&self.config_path, e))?;
        Ok(sha256_hex(&bytes) == self.config_sha256)
    }
}
