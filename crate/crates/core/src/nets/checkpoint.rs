//! Checkpoints: one JSON header line, a newline, then every parameter tensor
//! in `.vol` encoding in declaration order.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{SvaeConfig, SvaeModel, SynthConfig, SynthModel, Vae3dConfig, Vae3dModel};
use crate::error::{ensure, Error, Result};
use crate::phantom::volio::{decode_volume, encode_volume};
use crate::tensor::ParamSet;

pub trait Network: Sized {
    const KIND: &'static str;
    type Config: Serialize + DeserializeOwned + Clone;

    fn build(config: Self::Config, seed: u64) -> Result<Self>;
    fn config(&self) -> &Self::Config;
    fn seed(&self) -> u64;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
}

macro_rules! impl_network {
    ($model:ty, $config:ty, $kind:literal) => {
        impl Network for $model {
            const KIND: &'static str = $kind;
            type Config = $config;

            fn build(config: $config, seed: u64) -> Result<Self> {
                <$model>::new(config, seed)
            }
            fn config(&self) -> &$config {
                &self.config
            }
            fn seed(&self) -> u64 {
                self.seed
            }
            fn params(&self) -> &ParamSet {
                &self.params
            }
            fn params_mut(&mut self) -> &mut ParamSet {
                &mut self.params
            }
        }
    };
}

impl_network!(SynthModel, SynthConfig, "synth");
impl_network!(SvaeModel, SvaeConfig, "svae");
impl_network!(Vae3dModel, Vae3dConfig, "vae3d");

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub step: u64,
    pub params: Vec<String>,
}

pub fn encode_checkpoint<N: Network>(model: &N, step: u64) -> Vec<u8> {
    let header = Checkpoint {
        kind: N::KIND.to_string(),
        config: serde_json::to_value(model.config()).expect("config serializes"),
        seed: model.seed(),
        step,
        params: model.params().entries().iter().map(|e| e.name.clone()).collect(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for e in model.params().entries() {
        out.extend(encode_volume(&e.value));
    }
    out
}

pub fn write_checkpoint<N: Network>(path: &Path, model: &N, step: u64) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, encode_checkpoint(model, step)).map_err(|e| Error::io(path, e))
}

/// Rebuilds the model from the stored config and overwrites its parameters.
/// Returns the model and the stored step.
pub fn read_checkpoint<N: Network>(path: &Path) -> Result<(N, u64)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::contract(format!("{}: checkpoint header missing", path.display())))?;
    let header: Checkpoint =
        serde_json::from_slice(&bytes[..nl]).map_err(|source| Error::Json { path: path.into(), source })?;
    ensure!(header.kind == N::KIND, "checkpoint holds a {} model, expected {}", header.kind, N::KIND);
    let config: N::Config =
        serde_json::from_value(header.config).map_err(|source| Error::Json { path: path.into(), source })?;
    let mut model = N::build(config, header.seed)?;
    let names: Vec<String> = model.params().entries().iter().map(|e| e.name.clone()).collect();
    ensure!(names == header.params, "checkpoint parameter list does not match the architecture");
    let mut offset = nl + 1;
    for entry in model.params_mut().entries_mut() {
        let (t, used) =
            decode_volume(&bytes[offset..]).map_err(|kind| Error::Volume { path: path.into(), kind })?;
        ensure!(
            t.shape() == entry.value.shape(),
            "parameter {} has shape {:?}, expected {:?}",
            entry.name,
            t.shape(),
            entry.value.shape()
        );
        entry.value = t;
        offset += used;
    }
    ensure!(offset == bytes.len(), "{} trailing bytes after checkpoint", bytes.len() - offset);
    Ok((model, header.step))
}
