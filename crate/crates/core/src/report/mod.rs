//! Run configuration, report files and figures.

pub mod images;
pub mod tables;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::phantom::DatasetConfig;
use crate::pipeline::{BenchmarkOptions, TrainConfig};

/// Input locations of a run. Excluded from the config hash.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunPaths {
    /// Dataset directory written by `gen-data`; generated in memory when unset.
    pub data: Option<PathBuf>,
    pub synth: Option<PathBuf>,
    pub svae: Option<PathBuf>,
    pub vae3d: Option<PathBuf>,
}

/// Fully resolved configuration of one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DatasetConfig,
    pub train: TrainConfig,
    pub benchmark: BenchmarkOptions,
    pub method: Option<String>,
    pub adapt_count: Option<usize>,
    pub samples: usize,
    pub paths: RunPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: DatasetConfig::default(),
            train: TrainConfig::default(),
            benchmark: BenchmarkOptions::default(),
            method: None,
            adapt_count: None,
            samples: 4,
            paths: RunPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|source| Error::Json { path: path.into(), source })
    }

    /// Training config with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { master_seed: self.seed, ..self.train.clone() }
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut b = serde_json::to_vec_pretty(self).expect("config serializes");
        b.push(b'\n');
        b
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        tables::write_file(path, &self.to_json_bytes())
    }

    /// SHA-256 over the canonical JSON of everything except paths.
    pub fn hash(&self) -> String {
        let unpathed = RunConfig { paths: RunPaths::default(), ..self.clone() };
        let digest = Sha256::digest(serde_json::to_vec(&unpathed).expect("config serializes"));
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
