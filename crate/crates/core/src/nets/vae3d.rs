use serde::{Deserialize, Serialize};

use super::vae_core::{CoreShape, VaeCore};
use super::{GaussianDiag, GaussianVars};
use crate::error::Result;
use crate::rng::seeded;
use crate::tensor::{Bound, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Vae3dConfig {
    /// Cube edge of the input volume.
    pub volume: usize,
    pub latent_dim: usize,
    pub base_channels: usize,
    pub stages: usize,
    pub res_blocks: usize,
    pub slope: f64,
}

impl Default for Vae3dConfig {
    fn default() -> Self {
        Vae3dConfig { volume: 32, latent_dim: 128, base_channels: 8, stages: 3, res_blocks: 1, slope: 0.2 }
    }
}

/// Volumetric VAE: one latent row per volume.
#[derive(Clone, Debug)]
pub struct Vae3dModel {
    pub config: Vae3dConfig,
    pub seed: u64,
    pub params: ParamSet,
    core: VaeCore,
}

impl Vae3dModel {
    pub fn new(config: Vae3dConfig, seed: u64) -> Result<Self> {
        let shape = CoreShape {
            rank: 3,
            extent: config.volume,
            latent_dim: config.latent_dim,
            base_channels: config.base_channels,
            stages: config.stages,
            res_blocks: config.res_blocks,
            slope: config.slope,
        };
        let mut params = ParamSet::new();
        let core = VaeCore::new(shape, &mut params, &mut seeded(seed))?;
        Ok(Vae3dModel { config, seed, params, core })
    }

    pub fn encoder_param_count(&self) -> usize {
        self.params.count_prefix("enc.")
    }

    pub fn encode_on(&self, tape: &mut Tape, p: &Bound, volume: Var) -> Result<GaussianVars> {
        self.core.encode(tape, p, volume)
    }

    pub fn decode_on(&self, tape: &mut Tape, p: &Bound, z: Var) -> Result<Var> {
        self.core.decode(tape, p, z)
    }

    pub fn encode(&self, volume: &Tensor) -> Result<GaussianDiag> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(volume.clone());
        Ok(self.encode_on(&mut tape, &p, x)?.values(&tape))
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let z = tape.constant(z.clone());
        let y = self.decode_on(&mut tape, &p, z)?;
        Ok(tape.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{SvaeConfig, SvaeModel};

    #[test]
    fn single_row_per_volume() {
        let m = Vae3dModel::new(Vae3dConfig::default(), 0).unwrap();
        let g = m.encode(&Tensor::full(&[1, 1, 32, 32, 32], 0.2)).unwrap();
        assert_eq!(g.mean.shape(), &[1, 128]);
        let y = m.decode(&g.mean).unwrap();
        assert_eq!(y.shape(), &[1, 1, 32, 32, 32]);
        assert!(m.encode(&Tensor::zeros(&[1, 1, 32, 32, 16])).is_err());
    }

    #[test]
    fn slice_encoder_is_smaller() {
        let s = SvaeModel::new(SvaeConfig::default(), 0).unwrap();
        let v = Vae3dModel::new(Vae3dConfig::default(), 0).unwrap();
        assert!(s.encoder_param_count() < v.encoder_param_count());
        assert!(s.encoder_param_count() > 0);
        assert!(s.encoder_param_count() < s.params.count());
    }
}
