use serde::{Deserialize, Serialize};

use super::vae_core::{CoreShape, VaeCore};
use super::{GaussianDiag, GaussianVars};
use crate::error::Result;
use crate::rng::seeded;
use crate::tensor::{Bound, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvaeConfig {
    /// Slice height and width.
    pub image: usize,
    pub latent_dim: usize,
    pub base_channels: usize,
    pub stages: usize,
    pub res_blocks: usize,
    pub slope: f64,
}

impl Default for SvaeConfig {
    fn default() -> Self {
        SvaeConfig { image: 32, latent_dim: 16, base_channels: 8, stages: 3, res_blocks: 1, slope: 0.2 }
    }
}

impl SvaeConfig {
    fn core(&self) -> CoreShape {
        CoreShape {
            rank: 2,
            extent: self.image,
            latent_dim: self.latent_dim,
            base_channels: self.base_channels,
            stages: self.stages,
            res_blocks: self.res_blocks,
            slope: self.slope,
        }
    }
}

/// Slice-wise VAE. A volume enters as `[S,1,H,W]`; row `s` of the resulting
/// Gaussian belongs to slice `s`, so the row sequence carries the depth axis.
#[derive(Clone, Debug)]
pub struct SvaeModel {
    pub config: SvaeConfig,
    pub seed: u64,
    pub params: ParamSet,
    core: VaeCore,
}

impl SvaeModel {
    pub fn new(config: SvaeConfig, seed: u64) -> Result<Self> {
        let mut params = ParamSet::new();
        let core = VaeCore::new(config.core(), &mut params, &mut seeded(seed))?;
        Ok(SvaeModel { config, seed, params, core })
    }

    /// Checks that `dims` is a valid `[S,1,H,W]` slice batch.
    pub fn check_slices(&self, dims: &[usize]) -> Result<()> {
        self.core.check_input(dims)
    }

    pub fn encoder_param_count(&self) -> usize {
        self.params.count_prefix("enc.")
    }

    pub fn encode_on(&self, tape: &mut Tape, p: &Bound, slices: Var) -> Result<GaussianVars> {
        self.core.encode(tape, p, slices)
    }

    pub fn decode_on(&self, tape: &mut Tape, p: &Bound, z: Var) -> Result<Var> {
        self.core.decode(tape, p, z)
    }

    pub fn encode(&self, slices: &Tensor) -> Result<GaussianDiag> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(slices.clone());
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

/// `[1,1,D,H,W]` volume as the slice batch `[D,1,H,W]` (axial slices).
pub fn volume_to_slices(volume: &Tensor) -> Result<Tensor> {
    let s = volume.shape();
    crate::error::ensure!(
        s.len() == 5 && s[0] == 1 && s[1] == 1,
        "expected a single-channel volume [1,1,D,H,W], got {s:?}"
    );
    volume.reshape(&[s[2], 1, s[3], s[4]])
}

pub fn slices_to_volume(slices: &Tensor) -> Result<Tensor> {
    let s = slices.shape();
    crate::error::ensure!(s.len() == 4 && s[1] == 1, "expected slices [S,1,H,W], got {s:?}");
    slices.reshape(&[1, 1, s[0], s[2], s[3]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::standard_normal;

    #[test]
    fn default_shapes() {
        let m = SvaeModel::new(SvaeConfig::default(), 0).unwrap();
        let x = standard_normal(&[32, 1, 32, 32], &mut seeded(1)).map(|v| v.tanh());
        let g = m.encode(&x).unwrap();
        assert_eq!(g.mean.shape(), &[32, 16]);
        assert_eq!(g.log_var.shape(), &[32, 16]);
        let y = m.decode(&g.mean).unwrap();
        assert_eq!(y.shape(), &[32, 1, 32, 32]);
        assert!(y.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn duplicated_rows_encode_identically() {
        let m = SvaeModel::new(SvaeConfig::default(), 2).unwrap();
        let one = standard_normal(&[1, 1, 32, 32], &mut seeded(4));
        let mut data = one.data().to_vec();
        data.extend_from_slice(one.data());
        let g = m.encode(&Tensor::new(&[2, 1, 32, 32], data).unwrap()).unwrap();
        let (a, b) = g.mean.data().split_at(16);
        assert_eq!(a, b);
        let z = Tensor::new(&[2, 16], [a, a].concat()).unwrap();
        let y = m.decode(&z).unwrap();
        let (p, q) = y.data().split_at(32 * 32);
        assert_eq!(p, q);
    }

    #[test]
    fn rejects_wrong_shapes() {
        let m = SvaeModel::new(SvaeConfig::default(), 0).unwrap();
        assert!(m.encode(&Tensor::zeros(&[4, 1, 16, 16])).is_err());
        assert!(m.encode(&Tensor::zeros(&[4, 2, 32, 32])).is_err());
        assert!(m.decode(&Tensor::zeros(&[4, 15])).is_err());
        assert!(SvaeModel::new(SvaeConfig { image: 36, ..SvaeConfig::default() }, 0).is_err());
    }

    #[test]
    fn slice_view_round_trip() {
        let v = standard_normal(&[1, 1, 4, 8, 8], &mut seeded(0));
        let s = volume_to_slices(&v).unwrap();
        assert_eq!(s.shape(), &[4, 1, 8, 8]);
        assert_eq!(slices_to_volume(&s).unwrap(), v);
    }
}
