use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{ensure, Result};
use crate::metrics::{kl_std_normal, l1_loss, l2_recon};
use crate::nets::{SvaeModel, SynthModel, Vae3dModel};
use crate::phantom::{augment, AugmentSpec, VolumeSample};
use crate::rng::{derive_seed, stream, Rng};
use crate::tensor::{AdamState, ParamSet, Tape, Tensor};

/// Mean loss per epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub epochs: Vec<f64>,
}

impl LossTrace {
    pub fn first(&self) -> f64 {
        self.epochs.first().copied().unwrap_or(f64::NAN)
    }

    pub fn last(&self) -> f64 {
        self.epochs.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VaeTrace {
    pub recon: Vec<f64>,
    pub kl: Vec<f64>,
}

pub(crate) fn adam_for(params: &ParamSet, lr: f64, cfg: &TrainConfig) -> Result<AdamState> {
    AdamState::new(params, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
}

/// Endless stream of augmented source pairs: each pass visits every case
/// once in a fresh shuffled order.
pub(crate) struct SourceFeeder<'a> {
    pairs: &'a [VolumeSample],
    spec: AugmentSpec,
    order_rng: Rng,
    aug_rng: Rng,
    queue: Vec<usize>,
}

impl<'a> SourceFeeder<'a> {
    pub fn new(pairs: &'a [VolumeSample], spec: &AugmentSpec, master: u64, tag: &str) -> Result<Self> {
        ensure!(!pairs.is_empty(), "supervised training needs at least one paired case");
        Ok(SourceFeeder {
            pairs,
            spec: spec.clone(),
            order_rng: stream(master, &format!("{tag}/order"), 0),
            aug_rng: stream(master, &format!("{tag}/augment"), 0),
            queue: Vec::new(),
        })
    }

    pub fn next_pair(&mut self) -> (Tensor, Tensor) {
        if self.queue.is_empty() {
            self.queue = (0..self.pairs.len()).collect();
            self.queue.shuffle(&mut self.order_rng);
            self.queue.reverse();
        }
        let i = self.queue.pop().expect("queue refilled");
        let s = &self.pairs[i];
        if self.spec.is_identity() {
            (s.input_batch(), s.target_batch())
        } else {
            let a = augment(s, &self.spec, &mut self.aug_rng);
            (a.input_batch(), a.target_batch())
        }
    }
}

/// One L1 step of the synthesis network on a single pair.
pub(crate) fn synth_l1_step(model: &mut SynthModel, adam: &mut AdamState, x: Tensor, y: Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, true);
    let xv = tape.constant(x);
    let yv = tape.constant(y);
    let pred = model.forward_on(&mut tape, &p, xv)?;
    let loss = l1_loss(&mut tape, pred, yv)?;
    let grads = tape.backward(loss)?;
    model.params.zero_grad();
    model.params.accumulate(&grads, &p)?;
    adam.step(&mut model.params)?;
    tape.value(loss).item()
}

/// Runs `epochs` passes of L1 training over `pairs`.
pub(crate) fn fit_synth(
    model: &mut SynthModel,
    pairs: &[VolumeSample],
    epochs: usize,
    lr: f64,
    cfg: &TrainConfig,
    tag: &str,
) -> Result<LossTrace> {
    let mut feeder = SourceFeeder::new(pairs, &cfg.augment, cfg.master_seed, tag)?;
    let mut adam = adam_for(&model.params, lr, cfg)?;
    let mut trace = LossTrace::default();
    for _ in 0..epochs {
        let mut total = 0.0;
        for _ in 0..pairs.len() {
            let (x, y) = feeder.next_pair();
            total += synth_l1_step(model, &mut adam, x, y)?;
        }
        trace.epochs.push(total / pairs.len() as f64);
    }
    Ok(trace)
}

pub fn init_synth(cfg: &TrainConfig) -> Result<SynthModel> {
    SynthModel::new(cfg.synth.clone(), derive_seed(cfg.master_seed, "init/synth", 0))
}

/// Supervised source training of the synthesis network.
pub fn train_synth_supervised(pairs: &[VolumeSample], cfg: &TrainConfig) -> Result<(SynthModel, LossTrace)> {
    cfg.validate()?;
    let mut model = init_synth(cfg)?;
    let trace = fit_synth(&mut model, pairs, cfg.epochs_syn, cfg.lr_syn, cfg, "synth")?;
    Ok((model, trace))
}

/// L1 fine-tuning of a trained synthesis network on paired target cases.
pub fn supervised_da_finetune(
    synth: &SynthModel,
    pairs: &[VolumeSample],
    cfg: &TrainConfig,
) -> Result<(SynthModel, LossTrace)> {
    cfg.validate()?;
    ensure!(!pairs.is_empty(), "supervised fine-tuning needs at least one target pair");
    let mut model = synth.clone();
    let trace = fit_synth(&mut model, pairs, cfg.epochs_finetune, cfg.lr_syn, cfg, "finetune")?;
    Ok((model, trace))
}

/// Single-channel output volumes `[1,D,H,W]` as network batches.
fn volume_batch(v: &Tensor) -> Result<Tensor> {
    let s = v.shape();
    match s.len() {
        4 if s[0] == 1 => v.reshape(&[1, 1, s[1], s[2], s[3]]),
        5 if s[0] == 1 && s[1] == 1 => Ok(v.clone()),
        _ => Err(crate::Error::contract(format!("expected a single-channel volume, got {s:?}"))),
    }
}

pub(crate) fn slice_stack(v: &Tensor) -> Result<Tensor> {
    let b = volume_batch(v)?;
    let s = b.shape();
    b.reshape(&[s[2], 1, s[3], s[4]])
}

fn gather_slices(stack: &Tensor, idx: &[usize]) -> Tensor {
    let plane: usize = stack.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * plane);
    for &i in idx {
        data.extend_from_slice(&stack.data()[i * plane..(i + 1) * plane]);
    }
    let mut shape = stack.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(&shape, data).expect("gathered slices")
}

/// Trains the slice VAE. Each step uses one volume: its slices, shuffled,
/// form the batch (a random `svae_batch_fraction` share of them when below 1).
pub fn train_svae(volumes: &[Tensor], cfg: &TrainConfig) -> Result<(SvaeModel, VaeTrace)> {
    cfg.validate()?;
    ensure!(!volumes.is_empty(), "s-VAE training needs at least one volume");
    let mut model = SvaeModel::new(cfg.svae.clone(), derive_seed(cfg.master_seed, "init/svae", 0))?;
    let stacks = volumes.iter().map(slice_stack).collect::<Result<Vec<_>>>()?;
    for s in &stacks {
        model.check_slices(s.shape())?;
    }
    let depth = stacks[0].shape()[0];
    ensure!(stacks.iter().all(|s| s.shape()[0] == depth), "all volumes need the same slice count");
    let batch = ((depth as f64 * cfg.svae_batch_fraction).round() as usize).clamp(1, depth);
    let mut adam = adam_for(&model.params, cfg.lr_svae, cfg)?;
    let mut order_rng = stream(cfg.master_seed, "svae/order", 0);
    let mut slice_rng = stream(cfg.master_seed, "svae/slices", 0);
    let mut noise_rng = stream(cfg.master_seed, "svae/noise", 0);
    let mut trace = VaeTrace::default();
    for _ in 0..cfg.epochs_svae {
        let mut order: Vec<usize> = (0..stacks.len()).collect();
        order.shuffle(&mut order_rng);
        let (mut recon, mut kl) = (0.0, 0.0);
        for &v in &order {
            let mut idx: Vec<usize> = (0..depth).collect();
            idx.shuffle(&mut slice_rng);
            idx.truncate(batch);
            let x = gather_slices(&stacks[v], &idx);
            let mut tape = Tape::new();
            let p = model.params.bind(&mut tape, true);
            let xv = tape.constant(x);
            let g = model.encode_on(&mut tape, &p, xv)?;
            let z = crate::nets::reparameterize(&mut tape, g, &mut noise_rng)?;
            let y = model.decode_on(&mut tape, &p, z)?;
            let (r, k, loss) = vae_loss(&mut tape, y, xv, g, cfg)?;
            recon += r;
            kl += k;
            let grads = tape.backward(loss)?;
            model.params.zero_grad();
            model.params.accumulate(&grads, &p)?;
            adam.step(&mut model.params)?;
        }
        trace.recon.push(recon / order.len() as f64);
        trace.kl.push(kl / order.len() as f64);
    }
    Ok((model, trace))
}

/// `l2 + kl_weight * kl`; the KL term is left off the tape when its weight is 0.
fn vae_loss(
    tape: &mut Tape,
    y: crate::tensor::Var,
    x: crate::tensor::Var,
    g: crate::nets::GaussianVars,
    cfg: &TrainConfig,
) -> Result<(f64, f64, crate::tensor::Var)> {
    let recon = l2_recon(tape, y, x)?;
    let kl = kl_std_normal(tape, g, cfg.kl_direction)?;
    let (r, k) = (tape.value(recon).item()?, tape.value(kl).item()?);
    let loss = if cfg.kl_weight == 0.0 {
        recon
    } else {
        let w = tape.scale(kl, cfg.kl_weight);
        tape.add(recon, w)?
    };
    Ok((r, k, loss))
}

/// Trains the volumetric VAE, one whole volume per step.
pub fn train_vae3d(volumes: &[Tensor], cfg: &TrainConfig) -> Result<(Vae3dModel, VaeTrace)> {
    cfg.validate()?;
    ensure!(!volumes.is_empty(), "3D VAE training needs at least one volume");
    let mut model = Vae3dModel::new(cfg.vae3d.clone(), derive_seed(cfg.master_seed, "init/vae3d", 0))?;
    let batches = volumes.iter().map(volume_batch).collect::<Result<Vec<_>>>()?;
    let mut adam = adam_for(&model.params, cfg.lr_svae, cfg)?;
    let mut order_rng = stream(cfg.master_seed, "vae3d/order", 0);
    let mut noise_rng = stream(cfg.master_seed, "vae3d/noise", 0);
    let mut trace = VaeTrace::default();
    for _ in 0..cfg.epochs_vae3d {
        let mut order: Vec<usize> = (0..batches.len()).collect();
        order.shuffle(&mut order_rng);
        let (mut recon, mut kl) = (0.0, 0.0);
        for &v in &order {
            let mut tape = Tape::new();
            let p = model.params.bind(&mut tape, true);
            let xv = tape.constant(batches[v].clone());
            let g = model.encode_on(&mut tape, &p, xv)?;
            let z = crate::nets::reparameterize(&mut tape, g, &mut noise_rng)?;
            let y = model.decode_on(&mut tape, &p, z)?;
            let (r, k, loss) = vae_loss(&mut tape, y, xv, g, cfg)?;
            recon += r;
            kl += k;
            let grads = tape.backward(loss)?;
            model.params.zero_grad();
            model.params.accumulate(&grads, &p)?;
            adam.step(&mut model.params)?;
        }
        trace.recon.push(recon / order.len() as f64);
        trace.kl.push(kl / order.len() as f64);
    }
    Ok((model, trace))
}

/// Output-modality volumes of paired cases.
pub fn target_volumes(pairs: &[VolumeSample]) -> Vec<Tensor> {
    pairs.iter().map(|s| s.target.clone()).collect()
}
