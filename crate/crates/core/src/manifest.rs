use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance of an output directory. Wall times make this the one file
/// that is not byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Paths relative to the output directory, sorted.
    pub artifacts: Vec<String>,
    /// Wall time per stage, s.
    pub stage_wall_time_s: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            seed: config.seed,
            artifacts: Vec::new(),
            stage_wall_time_s: BTreeMap::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::format(&path, e.to_string()))
    }

    /// Adds a stage's artifacts and wall time to the manifest in `dir`,
    /// starting afresh if the stored manifest belongs to another configuration.
    pub fn record_stage(
        dir: &Path,
        config: &RunConfig,
        stage: &str,
        artifacts: &[String],
        wall_time_s: f64,
    ) -> Result<Self> {
        let mut m = match Self::load(dir)? {
            Some(m) if m.config_hash == config.hash() && m.version == env!("CARGO_PKG_VERSION") => m,
            _ => Self::new(config),
        };
        let mut all: BTreeSet<String> = m.artifacts.drain(..).collect();
        all.extend(artifacts.iter().cloned());
        m.artifacts = all.into_iter().collect();
        m.stage_wall_time_s.insert(stage.to_string(), wall_time_s);
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())?;
        Ok(m)
    }
}
