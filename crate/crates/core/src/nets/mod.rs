//! The three networks: the 3D synthesis generator, the 2D spatial VAE whose
//! batch axis carries the slice sequence of one volume, and the 3D VAE
//! baseline that folds the whole volume into its channels.

pub mod checkpoint;
mod layers;
mod svae;
mod synth;
mod vae_core;
mod vae3d;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, Network};
pub use svae::{slices_to_volume, volume_to_slices, SvaeConfig, SvaeModel};
pub use synth::{SynthConfig, SynthModel};
pub use vae3d::{Vae3dConfig, Vae3dModel};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure, Result};
use crate::tensor::{ParamSet, Tape, Tensor, Var};

/// Diagonal Gaussian rows `N(mean, exp(log_var))`, one row per slice (or
/// per volume for the 3D VAE).
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDiag {
    pub mean: Tensor,
    pub log_var: Tensor,
}

impl GaussianDiag {
    pub fn new(mean: Tensor, log_var: Tensor) -> Result<Self> {
        ensure!(mean.rank() == 2, "gaussian mean must be a matrix, got {:?}", mean.shape());
        mean.check_same_shape(&log_var)?;
        ensure!(mean.is_finite() && log_var.is_finite(), "gaussian parameters must be finite");
        Ok(GaussianDiag { mean, log_var })
    }

    pub fn rows(&self) -> usize {
        self.mean.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.mean.shape()[1]
    }

    pub fn variance(&self) -> Tensor {
        self.log_var.map(f64::exp)
    }
}

/// Tape handles of a [`GaussianDiag`] under construction.
#[derive(Clone, Copy, Debug)]
pub struct GaussianVars {
    pub mean: Var,
    pub log_var: Var,
}

impl GaussianVars {
    pub fn values(&self, tape: &Tape) -> GaussianDiag {
        GaussianDiag { mean: tape.value(self.mean).clone(), log_var: tape.value(self.log_var).clone() }
    }

    pub fn constant(tape: &mut Tape, g: &GaussianDiag) -> Self {
        GaussianVars { mean: tape.constant(g.mean.clone()), log_var: tape.constant(g.log_var.clone()) }
    }
}

/// Standard-normal noise of the given shape.
pub fn standard_normal<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape, data).expect("shape from caller")
}

/// `z = mean + exp(log_var / 2) * eps` with caller-supplied `eps`.
pub fn reparameterize_with(tape: &mut Tape, g: GaussianVars, eps: Tensor) -> Result<Var> {
    ensure!(
        eps.shape() == tape.shape(g.mean),
        "noise shape {:?} does not match gaussian {:?}",
        eps.shape(),
        tape.shape(g.mean)
    );
    let half = tape.scale(g.log_var, 0.5);
    let std = tape.exp(half);
    let e = tape.constant(eps);
    let noise = tape.mul(std, e)?;
    tape.add(g.mean, noise)
}

pub fn reparameterize<R: Rng + ?Sized>(tape: &mut Tape, g: GaussianVars, rng: &mut R) -> Result<Var> {
    let eps = standard_normal(tape.shape(g.mean), rng);
    reparameterize_with(tape, g, eps)
}

/// Exact number of scalar parameters.
pub fn param_count(params: &ParamSet) -> usize {
    params.count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn gaussian(mean: f64, log_var: f64, rows: usize, n: usize) -> GaussianDiag {
        GaussianDiag::new(Tensor::full(&[rows, n], mean), Tensor::full(&[rows, n], log_var)).unwrap()
    }

    #[test]
    fn zero_noise_gives_mean() {
        let g = gaussian(0.7, 0.3, 2, 3);
        let mut tape = Tape::new();
        let gv = GaussianVars::constant(&mut tape, &g);
        let z = reparameterize_with(&mut tape, gv, Tensor::zeros(&[2, 3])).unwrap();
        assert_eq!(tape.value(z), &g.mean);
    }

    #[test]
    fn tiny_variance_collapses_to_mean() {
        let g = gaussian(-1.2, -30.0, 4, 5);
        let mut tape = Tape::new();
        let gv = GaussianVars::constant(&mut tape, &g);
        let z = reparameterize(&mut tape, gv, &mut seeded(3)).unwrap();
        assert!(tape.value(z).max_abs_diff(&g.mean).unwrap() < 1e-6);
    }

    #[test]
    fn monte_carlo_std_matches() {
        let lv = 0.8f64;
        let g = gaussian(0.5, lv, 10_000, 1);
        let mut tape = Tape::new();
        let gv = GaussianVars::constant(&mut tape, &g);
        let z = reparameterize(&mut tape, gv, &mut seeded(11)).unwrap();
        let d = tape.value(z).data();
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
        let expect = (0.5 * lv).exp();
        assert!((var.sqrt() - expect).abs() / expect < 0.03, "std {} vs {expect}", var.sqrt());
    }

    #[test]
    fn reparameterize_is_differentiable() {
        let mut tape = Tape::new();
        let mean = tape.param(Tensor::full(&[1, 2], 0.1));
        let log_var = tape.param(Tensor::full(&[1, 2], 0.4));
        let eps = Tensor::new(&[1, 2], vec![0.5, -2.0]).unwrap();
        let z = reparameterize_with(&mut tape, GaussianVars { mean, log_var }, eps.clone()).unwrap();
        let l = tape.sum(z);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(mean).unwrap().data(), &[1.0, 1.0]);
        let s = (0.2f64).exp();
        let glv = g.get(log_var).unwrap().data();
        assert!((glv[0] - 0.5 * s * 0.5).abs() < 1e-12);
        assert!((glv[1] - 0.5 * s * -2.0).abs() < 1e-12);
    }
}
