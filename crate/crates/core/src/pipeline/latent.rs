use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::train::slice_stack;
use crate::error::{ensure, Result};
use crate::nets::{slices_to_volume, SvaeModel};
use crate::tensor::Tensor;

/// Shrinkage weight added to the covariance diagonal.
pub const SHRINKAGE: f64 = 1e-2;
/// Lower bound on the mean variance used to scale the shrinkage, so a
/// degenerate (all-zero) covariance still factorizes.
pub const MIN_MEAN_VARIANCE: f64 = 1e-8;

/// Joint Gaussian over the concatenated per-slice latent means of a volume.
#[derive(Clone, Debug)]
pub struct LatentGaussian {
    pub slices: usize,
    pub latent_dim: usize,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Lower-triangular Cholesky factor of `covariance`.
    pub factor: DMatrix<f64>,
}

/// Flattened `[S, n]` posterior means of each volume's slices in spatial order.
pub fn latent_rows(svae: &SvaeModel, volumes: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    volumes.iter().map(|v| Ok(svae.encode(&slice_stack(v)?)?.mean.into_data())).collect()
}

/// Sample mean and unbiased covariance of equal-length rows. Rows are
/// centred on the first one before averaging, so identical rows give an
/// exactly zero covariance.
pub fn empirical_moments(rows: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    ensure!(rows.len() >= 2, "need at least two volumes, got {}", rows.len());
    let d = rows[0].len();
    ensure!(rows.iter().all(|r| r.len() == d), "latent rows differ in length");
    let n = rows.len() as f64;
    let shifted: Vec<DVector<f64>> = rows.iter().map(|r| DVector::from_fn(d, |i, _| r[i] - rows[0][i])).collect();
    let shift_mean = shifted.iter().fold(DVector::zeros(d), |acc, s| acc + s) / n;
    let mut cov = DMatrix::zeros(d, d);
    for s in &shifted {
        let c = s - &shift_mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= n - 1.0;
    let mean = DVector::from_fn(d, |i, _| rows[0][i] + shift_mean[i]);
    Ok((mean, cov))
}

impl LatentGaussian {
    pub fn fit(svae: &SvaeModel, volumes: &[Tensor]) -> Result<LatentGaussian> {
        ensure!(volumes.len() >= 2, "fitting a latent Gaussian needs at least two volumes");
        let rows = latent_rows(svae, volumes)?;
        let (mean, mut covariance) = empirical_moments(&rows)?;
        let d = mean.len();
        let shrink = SHRINKAGE * (covariance.trace() / d as f64).max(MIN_MEAN_VARIANCE);
        for i in 0..d {
            covariance[(i, i)] += shrink;
        }
        let factor = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| crate::Error::Domain("latent covariance is not positive definite".into()))?
            .unpack();
        Ok(LatentGaussian { slices: d / svae.config.latent_dim, latent_dim: svae.config.latent_dim, mean, covariance, factor })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `mean + factor * eps` as an `[S, n]` latent matrix.
    pub fn latent_from_noise(&self, eps: &[f64]) -> Result<Tensor> {
        ensure!(eps.len() == self.dim(), "noise length {} does not match {}", eps.len(), self.dim());
        let z = &self.mean + &self.factor * DVector::from_column_slice(eps);
        Tensor::new(&[self.slices, self.latent_dim], z.as_slice().to_vec())
    }
}

fn check_compatible(svae: &SvaeModel, lg: &LatentGaussian) -> Result<()> {
    ensure!(
        svae.config.latent_dim == lg.latent_dim,
        "latent Gaussian width {} does not match s-VAE width {}",
        lg.latent_dim,
        svae.config.latent_dim
    );
    Ok(())
}

/// Decodes the volume for a given standard-normal noise vector.
pub fn decode_latent_sample(svae: &SvaeModel, lg: &LatentGaussian, eps: &[f64]) -> Result<Tensor> {
    check_compatible(svae, lg)?;
    slices_to_volume(&svae.decode(&lg.latent_from_noise(eps)?)?)
}

/// Draws `count` volumes `[1,1,D,H,W]` from the latent Gaussian.
pub fn sample_volumes<R: Rng + ?Sized>(
    svae: &SvaeModel,
    lg: &LatentGaussian,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Tensor>> {
    check_compatible(svae, lg)?;
    (0..count)
        .map(|_| {
            let eps: Vec<f64> = (0..lg.dim()).map(|_| rng.sample(StandardNormal)).collect();
            decode_latent_sample(svae, lg, &eps)
        })
        .collect()
}
