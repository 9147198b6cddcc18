//! Run manifests: what ran, with which configuration, how long each stage
//! took and what it scored.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{PipelineConfig, PipelineError};
use crate::metrics::EvalReport;
use crate::nn::checkpoint::write_atomic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub software_version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub stage_timings: Vec<StageTiming>,
    pub checkpoint: Option<String>,
    /// Deterministic for a fixed configuration and seed.
    pub metrics: Option<EvalReport>,
    /// Further deterministic scalars (losses, counts).
    pub summary: serde_json::Value,
    /// Wall-clock completion time; excluded from reproducibility checks.
    pub finished_unix_s: u64,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &PipelineConfig) -> Self {
        Self {
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            stage_timings: Vec::new(),
            checkpoint: None,
            metrics: None,
            summary: serde_json::Value::Null,
            finished_unix_s: 0,
        }
    }

    /// Stamps the completion time and writes the manifest atomically.
    pub fn finish(mut self, path: &Path) -> Result<Self, PipelineError> {
        self.finished_unix_s = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        write_json_atomic(path, &self)?;
        Ok(self)
    }
}

/// Pretty JSON written through a temporary file and renamed into place.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| PipelineError::Config(e.to_string()))?;
    bytes.push(b'\n');
    Ok(write_atomic(path, &bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn written_manifest_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = RunManifest::new("train", &PipelineConfig::default()).finish(&path).unwrap();
        let back: RunManifest = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(!dir.path().join("manifest.json.tmp").exists());
    }
}
