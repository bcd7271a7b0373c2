//! Run manifests: what produced a set of outputs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::config::PipelineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub crate_version: String,
    pub config_hash: String,
    /// Canonical JSON of the resolved configuration.
    pub config: serde_json::Value,
    pub seed: u64,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
    /// Numbers worth reading without opening the outputs.
    pub summary: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &PipelineConfig) -> Self {
        RunManifest {
            command: command.into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: cfg.hash(),
            config: serde_json::from_str(&cfg.canonical_json()).expect("canonical json parses"),
            seed: cfg.scene.seed,
            wall_time_s: 0.0,
            outputs: Vec::new(),
            summary: serde_json::Value::Null,
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| crate::error::Error::param("manifest", e.to_string()))
    }
}
