//! Training objectives and evaluation metrics.
//!
//! Each objective comes in two forms: a tape version that builds a
//! differentiable scalar, and a plain version over tensors used for
//! reporting.

mod segment;
mod ssim;

pub use segment::{dice, threshold_segment, DiceScores};
pub use ssim::{ssim, SsimConfig};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nets::{GaussianDiag, GaussianVars};
use crate::tensor::{Tape, Tensor, Var};

/// Order of the arguments of the KL term against `N(0, I)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlDirection {
    /// `KL(N(mu, sigma) || N(0, I))`.
    #[default]
    PosteriorToPrior,
    /// `KL(N(0, I) || N(mu, sigma))`.
    PriorToPosterior,
}

pub fn l1_loss(tape: &mut Tape, pred: Var, truth: Var) -> Result<Var> {
    let d = tape.sub(pred, truth)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

pub fn l2_recon(tape: &mut Tape, pred: Var, truth: Var) -> Result<Var> {
    let d = tape.sub(pred, truth)?;
    let s = tape.square(d);
    Ok(tape.mean(s))
}

/// Closed-form KL against the standard normal, summed over the latent axis
/// and averaged over rows.
pub fn kl_std_normal(tape: &mut Tape, g: GaussianVars, direction: KlDirection) -> Result<Var> {
    let rows = tape.shape(g.mean)[0] as f64;
    let mu2 = tape.square(g.mean);
    let terms = match direction {
        KlDirection::PosteriorToPrior => {
            let var = tape.exp(g.log_var);
            let a = tape.add(mu2, var)?;
            let b = tape.sub(a, g.log_var)?;
            tape.add_scalar(b, -1.0)
        }
        KlDirection::PriorToPosterior => {
            let neg = tape.scale(g.log_var, -1.0);
            let inv_var = tape.exp(neg);
            let one_mu2 = tape.add_scalar(mu2, 1.0);
            let ratio = tape.mul(one_mu2, inv_var)?;
            let a = tape.add(g.log_var, ratio)?;
            tape.add_scalar(a, -1.0)
        }
    };
    let total = tape.sum(terms);
    Ok(tape.scale(total, 0.5 / rows))
}

/// Closed-form KL between the posterior `g` and a fixed diagonal Gaussian
/// `reference` of the same shape, summed over the latent axis and averaged
/// over rows. `PosteriorToPrior` is `KL(g || reference)`.
pub fn kl_diag(tape: &mut Tape, g: GaussianVars, reference: &GaussianDiag, direction: KlDirection) -> Result<Var> {
    ensure!(
        tape.shape(g.mean) == reference.mean.shape(),
        "reference shape {:?} does not match posterior {:?}",
        reference.mean.shape(),
        tape.shape(g.mean)
    );
    let rows = reference.rows() as f64;
    let ref_mean = tape.constant(reference.mean.clone());
    let ref_lv = tape.constant(reference.log_var.clone());
    let d = tape.sub(g.mean, ref_mean)?;
    let d2 = tape.square(d);
    // Both orders share the form `lv_b - lv_a + (exp(lv_a) + d^2) exp(-lv_b) - 1`.
    let (lv_a, lv_b) = match direction {
        KlDirection::PosteriorToPrior => (g.log_var, ref_lv),
        KlDirection::PriorToPosterior => (ref_lv, g.log_var),
    };
    let var_a = tape.exp(lv_a);
    let spread = tape.add(var_a, d2)?;
    let neg_b = tape.scale(lv_b, -1.0);
    let inv_b = tape.exp(neg_b);
    let ratio = tape.mul(spread, inv_b)?;
    let logs = tape.sub(lv_b, lv_a)?;
    let a = tape.add(logs, ratio)?;
    let terms = tape.add_scalar(a, -1.0);
    let total = tape.sum(terms);
    Ok(tape.scale(total, 0.5 / rows))
}

pub fn kl_diag_value(g: &GaussianDiag, reference: &GaussianDiag, direction: KlDirection) -> Result<f64> {
    ensure!(g.mean.shape() == reference.mean.shape(), "reference shape does not match posterior");
    let q = g.mean.data().iter().zip(g.log_var.data());
    let p = reference.mean.data().iter().zip(reference.log_var.data());
    let total: f64 = q
        .zip(p)
        .map(|((&mq, &lq), (&mp, &lp))| {
            let (la, lb) = match direction {
                KlDirection::PosteriorToPrior => (lq, lp),
                KlDirection::PriorToPosterior => (lp, lq),
            };
            lb - la + (la.exp() + (mq - mp) * (mq - mp)) * (-lb).exp() - 1.0
        })
        .sum();
    Ok(0.5 * total / g.rows() as f64)
}

pub fn l1(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    Ok(pred.zip_map(truth, |a, b| (a - b).abs())?.mean())
}

pub fn mse(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    Ok(pred.zip_map(truth, |a, b| (a - b) * (a - b))?.mean())
}

pub fn kl_value(g: &GaussianDiag, direction: KlDirection) -> f64 {
    let total: f64 = g
        .mean
        .data()
        .iter()
        .zip(g.log_var.data())
        .map(|(&m, &lv)| match direction {
            KlDirection::PosteriorToPrior => m * m + lv.exp() - lv - 1.0,
            KlDirection::PriorToPosterior => lv + (1.0 + m * m) * (-lv).exp() - 1.0,
        })
        .sum();
    0.5 * total / g.rows() as f64
}

/// Peak signal-to-noise ratio in dB; `+inf` when the inputs are identical.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_loss(f: impl Fn(&mut Tape, Var, Var) -> Result<Var>, p: &Tensor, t: &Tensor) -> (f64, Tensor) {
        let mut tape = Tape::new();
        let pv = tape.param(p.clone());
        let tv = tape.constant(t.clone());
        let l = f(&mut tape, pv, tv).unwrap();
        let g = tape.backward(l).unwrap();
        (tape.value(l).item().unwrap(), g.get(pv).unwrap().clone())
    }

    #[test]
    fn l1_examples() {
        let t = Tensor::new(&[4], vec![0.1, -0.2, 0.3, 0.0]).unwrap();
        assert_eq!(scalar_loss(l1_loss, &t, &t).0, 0.0);
        let p = t.map(|v| v + 0.5);
        let (l, g) = scalar_loss(l1_loss, &p, &t);
        assert!((l - 0.5).abs() < 1e-12);
        assert!(g.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let q = Tensor::new(&[4], vec![0.0, 0.0, 0.5, -1.0]).unwrap();
        let (_, g) = scalar_loss(l1_loss, &q, &t);
        assert_eq!(g.data(), &[-0.25, 0.25, 0.25, -0.25]);
    }

    #[test]
    fn l2_examples() {
        let t = Tensor::new(&[2, 2], vec![0.4, -0.1, 0.0, 0.9]).unwrap();
        assert_eq!(scalar_loss(l2_recon, &t, &t).0, 0.0);
        let p = t.map(|v| v + 0.1);
        let (l, g) = scalar_loss(l2_recon, &p, &t);
        assert!((l - 0.01).abs() < 1e-12);
        assert!(g.data().iter().all(|&v| (v - 2.0 * 0.1 / 4.0).abs() < 1e-12));
    }

    #[test]
    fn kl_examples() {
        let zero = GaussianDiag::new(Tensor::zeros(&[3, 4]), Tensor::zeros(&[3, 4])).unwrap();
        for d in [KlDirection::PosteriorToPrior, KlDirection::PriorToPosterior] {
            assert_eq!(kl_value(&zero, d), 0.0);
        }
        let one = GaussianDiag::new(Tensor::ones(&[1, 1]), Tensor::zeros(&[1, 1])).unwrap();
        assert!((kl_value(&one, KlDirection::PosteriorToPrior) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tape_kl_matches_value() {
        let mean = Tensor::new(&[2, 3], vec![0.3, -1.2, 0.0, 2.0, 0.5, -0.1]).unwrap();
        let log_var = Tensor::new(&[2, 3], vec![-0.4, 0.9, 0.0, 1.5, -2.0, 0.2]).unwrap();
        let g = GaussianDiag::new(mean, log_var).unwrap();
        for d in [KlDirection::PosteriorToPrior, KlDirection::PriorToPosterior] {
            let mut tape = Tape::new();
            let gv = GaussianVars::constant(&mut tape, &g);
            let k = kl_std_normal(&mut tape, gv, d).unwrap();
            assert!((tape.value(k).item().unwrap() - kl_value(&g, d)).abs() < 1e-12);
        }
    }

    #[test]
    fn psnr_examples() {
        let a = Tensor::zeros(&[10]);
        let b = Tensor::full(&[10], 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr(&a, &a, 2.0).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &Tensor::zeros(&[9]), 1.0).is_err());
    }
}
