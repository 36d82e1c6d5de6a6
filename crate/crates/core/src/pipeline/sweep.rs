use serde::{Deserialize, Serialize};

use super::eval::{evaluate, Stat};
use super::latent::{sample_volumes, LatentGaussian};
use super::train::train_svae;
use super::uda::adapt_uda;
use super::TrainConfig;
use crate::error::{ensure, Result};
use crate::nets::{SvaeModel, SynthModel};
use crate::phantom::{histogram, histogram_l1, DatasetSplit, DomainSpec};
use crate::rng::stream;
use crate::tensor::Tensor;

/// Slice-batch shares of a volume covered by the batch-size sweep.
pub const BATCH_FRACTIONS: [f64; 4] = [0.125, 0.25, 0.5, 1.0];
pub const ADAPT_COUNTS: [usize; 4] = [2, 4, 6, 8];
pub const HIST_BINS: usize = 32;

/// Pooled intensity histogram of a set of volumes.
pub fn pooled_histogram(volumes: &[Tensor]) -> Vec<f64> {
    let all: Vec<f64> = volumes.iter().flat_map(|v| v.data().iter().copied()).collect();
    histogram(&all, HIST_BINS)
}

pub fn histogram_distance(samples: &[Tensor], real: &[Tensor]) -> f64 {
    histogram_l1(&pooled_histogram(samples), &pooled_histogram(real))
}

#[derive(Clone, Debug)]
pub struct BatchSweepRow {
    pub fraction: f64,
    pub batch: usize,
    pub hist_distance: f64,
    pub final_recon: f64,
    pub samples: Vec<Tensor>,
}

/// Trains one s-VAE per batch fraction on `volumes`, fits the latent
/// Gaussian, samples `samples_per_row` volumes and scores their histogram
/// against the training volumes. Every row draws the same noise.
pub fn sweep_batch_size(
    volumes: &[Tensor],
    fractions: &[f64],
    samples_per_row: usize,
    cfg: &TrainConfig,
) -> Result<Vec<BatchSweepRow>> {
    ensure!(!volumes.is_empty() && samples_per_row >= 1, "batch sweep needs volumes and at least one sample");
    let depth = volumes[0].shape()[volumes[0].rank() - 3];
    ensure!(depth % 8 == 0, "slice count {depth} must be divisible by 8");
    fractions
        .iter()
        .map(|&fraction| {
            let c = TrainConfig { svae_batch_fraction: fraction, ..cfg.clone() };
            let (svae, trace) = train_svae(volumes, &c)?;
            batch_row(&svae, volumes, fraction, depth, trace.recon.last().copied().unwrap_or(f64::NAN), samples_per_row, cfg)
        })
        .collect()
}

/// Scores an already trained s-VAE as one sweep row.
pub fn batch_row(
    svae: &SvaeModel,
    volumes: &[Tensor],
    fraction: f64,
    depth: usize,
    final_recon: f64,
    samples_per_row: usize,
    cfg: &TrainConfig,
) -> Result<BatchSweepRow> {
    let lg = LatentGaussian::fit(svae, volumes)?;
    let mut rng = stream(cfg.master_seed, "sweep/samples", 0);
    let samples = sample_volumes(svae, &lg, samples_per_row, &mut rng)?;
    Ok(BatchSweepRow {
        fraction,
        batch: ((depth as f64 * fraction).round() as usize).clamp(1, depth),
        hist_distance: histogram_distance(&samples, volumes),
        final_recon,
        samples,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    /// Number of adaptation volumes; 0 marks the unadapted baseline.
    pub count: usize,
    pub ssim: Stat,
    pub psnr: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountSweep {
    pub baseline: CountRow,
    pub rows: Vec<CountRow>,
}

/// Adapts with the first `count` target-adapt volumes for each count and
/// evaluates on target-test.
pub fn sweep_adapt_count(
    synth: &SynthModel,
    svae: &SvaeModel,
    split: &DatasetSplit,
    domain: &DomainSpec,
    counts: &[usize],
    cfg: &TrainConfig,
) -> Result<CountSweep> {
    let excluded = split.training_ids();
    let row = |count: usize, m: &SynthModel| -> Result<CountRow> {
        let r = evaluate(m, &split.target_test, domain, "sweep", &excluded, &cfg.ssim)?;
        Ok(CountRow { count, ssim: r.aggregate.ssim, psnr: r.aggregate.psnr })
    };
    let baseline = row(0, synth)?;
    let rows = counts
        .iter()
        .map(|&count| {
            let subset = split.adapt_subset(count)?;
            let (m, _) = adapt_uda(synth, svae, &split.source_train, &subset, cfg)?;
            row(count, &m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CountSweep { baseline, rows })
}
