use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, ExperimentName};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTiming {
    pub mean_solve_ms: f64,
    pub max_solve_ms: f64,
    pub sampling_time_ms: f64,
    pub mean_below_sampling_time: bool,
}

/// Provenance of one experiment run: hashes of the resolved config, the
/// checkpoint and every trace written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: ExperimentName,
    pub seed: u64,
    pub config_sha256: String,
    pub checkpoint_sha256: Option<String>,
    pub files: BTreeMap<String, String>,
    pub timing: Option<SolveTiming>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            experiment: cfg.experiment,
            seed: cfg.seed,
            config_sha256: sha256_hex(cfg.to_toml()?.as_bytes()),
            checkpoint_sha256: None,
            files: BTreeMap::new(),
            timing: None,
        })
    }

    pub fn checkpoint(&mut self, path: &Path) -> Result<()> {
        self.checkpoint_sha256 = Some(sha256_file(path)?);
        Ok(())
    }

    /// Records the hash of `root/rel` under the key `rel`.
    pub fn add_file(&mut self, root: &Path, rel: &str) -> Result<()> {
        self.files.insert(rel.to_string(), sha256_file(&root.join(rel))?);
        Ok(())
    }

    pub fn set_timing(&mut self, timing: SolveTiming) {
        self.timing = Some(timing);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
