use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::metrics::{dice, psnr, ssim, threshold_segment, SsimConfig};
use crate::nets::SynthModel;
use crate::phantom::{DomainSpec, VolumeSample};
use crate::tensor::Tensor;

/// Classes scored by Dice (background excluded).
pub const DICE_CLASSES: [u8; 4] = [1, 2, 3, 4];
/// Peak of the `[-1, 1]` network range.
pub const PSNR_PEAK: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub domain: String,
    pub ssim: f64,
    pub psnr: f64,
    pub dice: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 || !mean.is_finite() {
            if mean.is_finite() { 0.0 } else { f64::NAN }
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stat { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub ssim: Stat,
    pub psnr: Stat,
    pub dice: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub seed: u64,
    pub config_hash: String,
    pub cases: Vec<CaseMetrics>,
    pub aggregate: Aggregates,
}

impl EvalReport {
    pub fn from_cases(method: impl Into<String>, seed: u64, cases: Vec<CaseMetrics>) -> Result<Self> {
        ensure!(!cases.is_empty(), "an evaluation needs at least one case");
        let aggregate = aggregate(&cases);
        Ok(EvalReport { method: method.into(), seed, config_hash: String::new(), cases, aggregate })
    }

    pub fn recompute(&self) -> Aggregates {
        aggregate(&self.cases)
    }

    pub fn mean_ssim(&self) -> f64 {
        self.aggregate.ssim.mean
    }
}

fn aggregate(cases: &[CaseMetrics]) -> Aggregates {
    let col = |f: fn(&CaseMetrics) -> f64| cases.iter().map(f).collect::<Vec<_>>();
    Aggregates {
        ssim: Stat::of(&col(|c| c.ssim)),
        psnr: Stat::of(&col(|c| c.psnr)),
        dice: Stat::of(&col(|c| c.dice)),
    }
}

/// Scores one prediction against a paired case.
pub fn score_case(pred: &Tensor, case: &VolumeSample, domain: &DomainSpec, cfg: &SsimConfig) -> Result<CaseMetrics> {
    let truth = case.target_batch();
    let pred = if pred.shape() == truth.shape() { pred.clone() } else { pred.reshape(truth.shape())? };
    let seg = threshold_segment(&pred, domain);
    Ok(CaseMetrics {
        case_id: case.case_id.clone(),
        domain: case.domain_id.clone(),
        ssim: ssim(&pred, &truth, cfg)?,
        psnr: psnr(&pred, &truth, PSNR_PEAK)?,
        dice: dice(&seg, &case.labels.labels, &DICE_CLASSES)?.mean,
    })
}

/// Runs `synth` on every test case and scores it. Fails if a test case id
/// is among `excluded` (the ids used for training or adaptation).
pub fn evaluate(
    synth: &SynthModel,
    test: &[VolumeSample],
    domain: &DomainSpec,
    method: &str,
    excluded: &HashSet<&str>,
    cfg: &SsimConfig,
) -> Result<EvalReport> {
    for case in test {
        ensure!(!excluded.contains(case.case_id.as_str()), "test case {} was used for training", case.case_id);
    }
    let cases = test
        .iter()
        .map(|case| score_case(&synth.forward(&case.input_batch())?, case, domain, cfg))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_cases(method, 0, cases)
}

/// Mean L1 of `synth` on paired cases.
pub fn mean_l1(synth: &SynthModel, pairs: &[VolumeSample]) -> Result<f64> {
    let mut total = 0.0;
    for p in pairs {
        total += crate::metrics::l1(&synth.forward(&p.input_batch())?, &p.target_batch())?;
    }
    Ok(total / pairs.len().max(1) as f64)
}
