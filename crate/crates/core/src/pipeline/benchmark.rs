use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::eval::{evaluate, mean_l1, EvalReport};
use super::train::{supervised_da_finetune, target_volumes, train_svae, train_synth_supervised, train_vae3d};
use super::uda::{adapt_uda, adapt_uda_vae3d, UdaTrace};
use super::{LossTrace, TrainConfig, VaeTrace};
use crate::error::Result;
use crate::nets::{SvaeModel, SynthModel, Vae3dModel};
use crate::phantom::{make_control_sets, make_dataset, AugmentSpec, ControlSets, DatasetConfig, DatasetSplit};

pub const NO_DA: &str = "no-da";
pub const NO_DA_AUG: &str = "no-da-aug";
pub const VAE3D_UDA: &str = "vae3d-uda";
pub const SVAE_UDA: &str = "svae-uda";
pub const NO_SHIFT: &str = "no-shift";

pub fn supervised_da_tag(k: usize) -> String {
    format!("supervised-da({k})")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkOptions {
    pub vae3d: bool,
    pub augmented_baseline: bool,
    /// Paired target cases for the supervised upper bound; 0 skips it.
    pub finetune_count: usize,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions { vae3d: true, augmented_baseline: false, finetune_count: 8 }
    }
}

/// Everything one seed of the comparison produces.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub seed: u64,
    pub reports: Vec<EvalReport>,
    pub svae_encoder_params: usize,
    pub vae3d_encoder_params: Option<usize>,
    /// Held-out source L1 before and after s-VAE adaptation.
    pub source_l1_before: f64,
    pub source_l1_after: f64,
    pub synth_trace: LossTrace,
    pub svae_trace: VaeTrace,
    pub vae3d_trace: Option<VaeTrace>,
    pub uda_trace: UdaTrace,
    pub synth: SynthModel,
    pub svae: SvaeModel,
    pub adapted: SynthModel,
    pub vae3d: Option<Vae3dModel>,
    /// Wall-clock seconds per stage, in execution order.
    pub timings: Vec<(&'static str, f64)>,
}

impl Benchmark {
    pub fn report(&self, method: &str) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.method == method)
    }

    pub fn ssim(&self, method: &str) -> Option<f64> {
        self.report(method).map(EvalReport::mean_ssim)
    }
}

/// Trains every model of the comparison for one master seed and evaluates
/// each method on target-test (and the no-shift control on source-test).
pub fn run_benchmark(data: &DatasetConfig, cfg: &TrainConfig, opts: &BenchmarkOptions) -> Result<Benchmark> {
    cfg.validate()?;
    let seed = cfg.master_seed;
    let split = make_dataset(data, seed)?;
    let controls = make_control_sets(data, seed)?;
    run_benchmark_on(&split, &controls, data, cfg, opts)
}

pub fn run_benchmark_on(
    split: &DatasetSplit,
    controls: &ControlSets,
    data: &DatasetConfig,
    cfg: &TrainConfig,
    opts: &BenchmarkOptions,
) -> Result<Benchmark> {
    let excluded = split.training_ids();
    let eval_target = |m: &SynthModel, tag: &str| -> Result<EvalReport> {
        let mut r = evaluate(m, &split.target_test, &data.target, tag, &excluded, &cfg.ssim)?;
        r.seed = cfg.master_seed;
        Ok(r)
    };
    let mut reports = Vec::new();
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str| {
        timings.push((name, clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };

    let (synth, synth_trace) = train_synth_supervised(&split.source_train, cfg)?;
    reports.push(eval_target(&synth, NO_DA)?);
    let mut shift = evaluate(&synth, &controls.source_test, &data.source, NO_SHIFT, &excluded, &cfg.ssim)?;
    shift.seed = cfg.master_seed;
    lap("synth");

    if opts.augmented_baseline {
        let aug = TrainConfig { augment: AugmentSpec { intensity: true, ..cfg.augment.clone() }, ..cfg.clone() };
        let (m, _) = train_synth_supervised(&split.source_train, &aug)?;
        reports.push(eval_target(&m, NO_DA_AUG)?);
        lap("synth-augmented");
    }

    let volumes = target_volumes(&split.source_train);
    let (mut svae, svae_trace) = train_svae(&volumes, cfg)?;
    svae.params.freeze();
    lap("svae");
    let (adapted, uda_trace) = adapt_uda(&synth, &svae, &split.source_train, &split.target_adapt, cfg)?;
    reports.push(eval_target(&adapted, SVAE_UDA)?);
    lap("svae-uda");

    let (mut vae3d, mut vae3d_trace) = (None, None);
    if opts.vae3d {
        let (mut v, tr) = train_vae3d(&volumes, cfg)?;
        v.params.freeze();
        lap("vae3d");
        let (m, _) = adapt_uda_vae3d(&synth, &v, &split.source_train, &split.target_adapt, cfg)?;
        reports.push(eval_target(&m, VAE3D_UDA)?);
        lap("vae3d-uda");
        vae3d = Some(v);
        vae3d_trace = Some(tr);
    }

    if opts.finetune_count > 0 {
        let k = opts.finetune_count.min(controls.target_labeled.len());
        let (m, _) = supervised_da_finetune(&synth, &controls.target_labeled[..k], cfg)?;
        reports.push(eval_target(&m, &supervised_da_tag(k))?);
        lap("supervised-da");
    }
    reports.push(shift);

    Ok(Benchmark {
        seed: cfg.master_seed,
        reports,
        svae_encoder_params: svae.encoder_param_count(),
        vae3d_encoder_params: vae3d.as_ref().map(Vae3dModel::encoder_param_count),
        source_l1_before: mean_l1(&synth, &controls.source_test)?,
        source_l1_after: mean_l1(&adapted, &controls.source_test)?,
        synth_trace,
        svae_trace,
        vae3d_trace,
        uda_trace,
        synth,
        svae,
        adapted,
        vae3d,
        timings,
    })
}
