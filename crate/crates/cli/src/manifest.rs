use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Record written next to the outputs of every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    /// SHA-256 of the configuration file bytes.
    pub config_sha256: Option<String>,
    pub seed: u64,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: Option<f64>,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config_path: None,
            config_sha256: None,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: now(),
            finished_at: None,
            outputs: Vec::new(),
            warnings: Vec::new(),
            error: None,
        }
    }

    pub fn set_config(&mut self, path: &Path, bytes: &[u8]) {
        self.config_path = Some(path.display().to_string());
        let digest = Sha256::digest(bytes);
        self.config_sha256 = Some(digest.iter().map(|b| format!("{b:02x}")).collect());
    }

    pub fn finish(&mut self, error: Option<String>) {
        self.finished_at = Some(now());
        self.error = error;
    }
}
