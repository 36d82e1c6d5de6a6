use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::train::{adam_for, synth_l1_step, SourceFeeder};
use super::TrainConfig;
use crate::error::{ensure, Result};
use crate::metrics::{kl_std_normal, KlDirection};
use crate::nets::{GaussianDiag, GaussianVars, SvaeModel, SynthModel, Vae3dModel};
use crate::phantom::{UnpairedSample, VolumeSample};
use crate::rng::stream;
use crate::tensor::{AdamState, Tape, Tensor, Var};

/// What the adaptation KL compares synthesized target posteriors against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptReference {
    /// Match the moment-matched mixture of the synthesized target posteriors
    /// to that of the source output volumes.
    #[default]
    SourceMixture,
    /// Each posterior against the VAE's own `N(0, I)` prior.
    StandardNormal,
}

/// Frozen model whose encoder scores synthesized target volumes.
#[derive(Clone, Copy, Debug)]
pub enum AdaptPrior<'a> {
    Slices(&'a SvaeModel),
    Volume(&'a Vae3dModel),
}

impl AdaptPrior<'_> {
    fn is_frozen(&self) -> bool {
        match self {
            AdaptPrior::Slices(m) => m.params.is_frozen(),
            AdaptPrior::Volume(m) => m.params.is_frozen(),
        }
    }

    /// Encoder posterior of `y` (a `[1,1,D,H,W]` volume) with the prior's
    /// weights held constant: one row per slice, or a single row.
    pub fn posterior_on(&self, tape: &mut Tape, y: Var) -> Result<GaussianVars> {
        match self {
            AdaptPrior::Slices(m) => {
                let s = tape.shape(y).to_vec();
                ensure!(s.len() == 5 && s[0] == 1 && s[1] == 1, "expected one synthesized volume, got {s:?}");
                let slices = tape.reshape(y, &[s[2], 1, s[3], s[4]])?;
                let p = m.params.bind(tape, false);
                m.encode_on(tape, &p, slices)
            }
            AdaptPrior::Volume(m) => {
                let p = m.params.bind(tape, false);
                m.encode_on(tape, &p, y)
            }
        }
    }

    /// KL of the posterior of `y` against the standard normal.
    pub fn kl_on(&self, tape: &mut Tape, y: Var, direction: KlDirection) -> Result<Var> {
        let g = self.posterior_on(tape, y)?;
        kl_std_normal(tape, g, direction)
    }

    /// Plain posterior of one `[1,1,D,H,W]` volume.
    pub fn posterior(&self, volume: Tensor) -> Result<GaussianDiag> {
        let mut tape = Tape::new();
        let y = tape.constant(volume);
        let g = self.posterior_on(&mut tape, y)?;
        Ok(g.values(&tape))
    }
}

/// Per-row mean and variance of the equal-weight mixture of `posts`.
pub fn mixture_moments(posts: &[GaussianDiag]) -> Result<GaussianDiag> {
    ensure!(!posts.is_empty(), "a mixture needs at least one component");
    let n = posts.len() as f64;
    let mut mean = vec![0.0; posts[0].mean.numel()];
    for g in posts {
        ensure!(g.mean.shape() == posts[0].mean.shape(), "mixture components differ in shape");
        mean.iter_mut().zip(g.mean.data()).for_each(|(a, v)| *a += v / n);
    }
    let mut var = vec![0.0; mean.len()];
    for g in posts {
        for ((acc, (&m, &lv)), &c) in var.iter_mut().zip(g.mean.data().iter().zip(g.log_var.data())).zip(&mean) {
            *acc += (lv.exp() + (m - c) * (m - c)) / n;
        }
    }
    let shape = posts[0].mean.shape().to_vec();
    GaussianDiag::new(Tensor::new(&shape, mean)?, Tensor::new(&shape, var.into_iter().map(f64::ln).collect())?)
}

/// KL between the mixture of `live` and `others` (moment-matched per row)
/// and the fixed `reference`, averaged over rows. Only `live` carries
/// gradient. `PosteriorToPrior` puts the mixture first.
pub fn mixture_kl(
    tape: &mut Tape,
    live: GaussianVars,
    others: &[&GaussianDiag],
    reference: &GaussianDiag,
    direction: KlDirection,
) -> Result<Var> {
    let shape = reference.mean.shape().to_vec();
    ensure!(tape.shape(live.mean) == shape.as_slice(), "posterior shape does not match the reference");
    let n = (others.len() + 1) as f64;
    // Moments are accumulated relative to the reference mean.
    let (mut first, mut second) = (vec![0.0; reference.mean.numel()], vec![0.0; reference.mean.numel()]);
    for g in others {
        ensure!(g.mean.shape() == shape.as_slice(), "cached posterior shape does not match the reference");
        let it = g.mean.data().iter().zip(g.log_var.data()).zip(reference.mean.data());
        for ((f, s), ((&m, &lv), &r)) in first.iter_mut().zip(second.iter_mut()).zip(it) {
            *f += m - r;
            *s += lv.exp() + (m - r) * (m - r);
        }
    }
    let ref_mean = tape.constant(reference.mean.clone());
    let ref_lv = tape.constant(reference.log_var.clone());
    let first = tape.constant(Tensor::new(&shape, first)?);
    let second = tape.constant(Tensor::new(&shape, second)?);
    let d = tape.sub(live.mean, ref_mean)?;
    let d2 = tape.square(d);
    let var = tape.exp(live.log_var);
    let m_sum = tape.add(first, d)?;
    let m = tape.scale(m_sum, 1.0 / n);
    let s_live = tape.add(var, d2)?;
    let s_sum = tape.add(second, s_live)?;
    let s = tape.scale(s_sum, 1.0 / n);
    let m2 = tape.square(m);
    let v = tape.sub(s, m2)?;
    let lv = tape.log(v)?;
    let terms = match direction {
        KlDirection::PosteriorToPrior => {
            let neg = tape.scale(ref_lv, -1.0);
            let inv_ref = tape.exp(neg);
            let ratio = tape.mul(s, inv_ref)?;
            let logs = tape.sub(ref_lv, lv)?;
            let a = tape.add(logs, ratio)?;
            tape.add_scalar(a, -1.0)
        }
        KlDirection::PriorToPosterior => {
            let ref_var = tape.exp(ref_lv);
            let spread = tape.add(ref_var, m2)?;
            let neg = tape.scale(lv, -1.0);
            let inv_v = tape.exp(neg);
            let ratio = tape.mul(spread, inv_v)?;
            let logs = tape.sub(lv, ref_lv)?;
            let a = tape.add(logs, ratio)?;
            tape.add_scalar(a, -1.0)
        }
    };
    let total = tape.sum(terms);
    Ok(tape.scale(total, 0.5 / shape[0] as f64))
}

#[derive(Clone, Debug)]
enum Reference {
    StandardNormal,
    /// Source mixture plus the latest posterior of every target volume.
    Mixture { source: GaussianDiag, cached: Vec<GaussianDiag> },
}

/// The adaptation KL of a frozen prior on synthesized target volumes.
#[derive(Clone, Debug)]
pub struct AdaptObjective<'a> {
    pub prior: AdaptPrior<'a>,
    pub direction: KlDirection,
    reference: Reference,
}

impl<'a> AdaptObjective<'a> {
    pub fn new(prior: AdaptPrior<'a>, source: &[VolumeSample], cfg: &TrainConfig) -> Result<Self> {
        let reference = match cfg.adapt_reference {
            AdaptReference::SourceMixture => {
                ensure!(!source.is_empty(), "the source mixture needs at least one volume");
                let posts = source.iter().map(|s| prior.posterior(s.target_batch())).collect::<Result<Vec<_>>>()?;
                Reference::Mixture { source: mixture_moments(&posts)?, cached: Vec::new() }
            }
            AdaptReference::StandardNormal => Reference::StandardNormal,
        };
        Ok(AdaptObjective { prior, direction: cfg.kl_direction, reference })
    }

    /// Re-encodes the current synthesis of every target volume.
    pub fn refresh(&mut self, synth: &SynthModel, target: &[UnpairedSample]) -> Result<()> {
        if let Reference::Mixture { cached, .. } = &mut self.reference {
            *cached = target
                .iter()
                .map(|t| self.prior.posterior(synth.forward(&t.input_batch())?))
                .collect::<Result<Vec<_>>>()?;
        }
        Ok(())
    }

    /// KL for the synthesis `y` of target volume `live`.
    pub fn kl_on(&self, tape: &mut Tape, y: Var, live: usize) -> Result<Var> {
        let g = self.prior.posterior_on(tape, y)?;
        match &self.reference {
            Reference::StandardNormal => kl_std_normal(tape, g, self.direction),
            Reference::Mixture { source, cached } => {
                ensure!(live < cached.len(), "target posteriors are stale; refresh before adapting");
                let others: Vec<&GaussianDiag> =
                    cached.iter().enumerate().filter(|&(i, _)| i != live).map(|(_, g)| g).collect();
                mixture_kl(tape, g, &others, source, self.direction)
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UdaTrace {
    /// Mean unweighted adaptation KL per epoch.
    pub adapt_kl: Vec<f64>,
    /// Mean source L1 of the interleaved supervised steps per epoch.
    pub source_l1: Vec<f64>,
}

fn adapt_step(
    model: &mut SynthModel,
    adam: &mut AdamState,
    objective: &AdaptObjective<'_>,
    target: &[UnpairedSample],
    live: usize,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, true);
    let x = tape.constant(target[live].input_batch());
    let y = model.forward_on(&mut tape, &p, x)?;
    let kl = objective.kl_on(&mut tape, y, live)?;
    let loss = tape.scale(kl, cfg.ada_weight);
    let grads = tape.backward(loss)?;
    model.params.zero_grad();
    model.params.accumulate(&grads, &p)?;
    adam.step(&mut model.params)?;
    tape.value(kl).item()
}

/// Alternating adaptation: for every target volume, `source_steps_per_adapt`
/// supervised source steps followed by one step on the prior KL of the
/// synthesized target volume. Target outputs are never read.
pub fn adapt_with_prior(
    synth: &SynthModel,
    prior: AdaptPrior<'_>,
    source: &[VolumeSample],
    target: &[UnpairedSample],
    cfg: &TrainConfig,
) -> Result<(SynthModel, UdaTrace)> {
    cfg.validate()?;
    ensure!(prior.is_frozen(), "the adaptation prior must be frozen");
    ensure!(!target.is_empty(), "adaptation needs at least one target volume");
    let mut objective = AdaptObjective::new(prior, source, cfg)?;
    let mut model = synth.clone();
    let mut feeder = SourceFeeder::new(source, &cfg.augment, cfg.master_seed, "uda/source")?;
    let mut adam = adam_for(&model.params, cfg.lr_syn, cfg)?;
    let mut order_rng = stream(cfg.master_seed, "uda/target", 0);
    let mut trace = UdaTrace::default();
    for _ in 0..cfg.epochs_uda {
        let mut order: Vec<usize> = (0..target.len()).collect();
        order.shuffle(&mut order_rng);
        if cfg.ada_weight > 0.0 {
            objective.refresh(&model, target)?;
        }
        let (mut kl, mut l1) = (0.0, 0.0);
        for &t in &order {
            for _ in 0..cfg.source_steps_per_adapt {
                let (x, y) = feeder.next_pair();
                l1 += synth_l1_step(&mut model, &mut adam, x, y)?;
            }
            if cfg.ada_weight > 0.0 {
                kl += adapt_step(&mut model, &mut adam, &objective, target, t, cfg)?;
            }
        }
        trace.adapt_kl.push(kl / target.len() as f64);
        trace.source_l1.push(l1 / (target.len() * cfg.source_steps_per_adapt) as f64);
    }
    Ok((model, trace))
}

pub fn adapt_uda(
    synth: &SynthModel,
    svae: &SvaeModel,
    source: &[VolumeSample],
    target: &[UnpairedSample],
    cfg: &TrainConfig,
) -> Result<(SynthModel, UdaTrace)> {
    adapt_with_prior(synth, AdaptPrior::Slices(svae), source, target, cfg)
}

pub fn adapt_uda_vae3d(
    synth: &SynthModel,
    vae: &Vae3dModel,
    source: &[VolumeSample],
    target: &[UnpairedSample],
    cfg: &TrainConfig,
) -> Result<(SynthModel, UdaTrace)> {
    adapt_with_prior(synth, AdaptPrior::Volume(vae), source, target, cfg)
}

/// The supervised half of the adaptation schedule on its own: the same
/// source steps, in the same order, that [`adapt_with_prior`] would take.
pub fn continue_source_training(
    synth: &SynthModel,
    source: &[VolumeSample],
    adapt_count: usize,
    cfg: &TrainConfig,
) -> Result<SynthModel> {
    cfg.validate()?;
    let mut model = synth.clone();
    let mut feeder = SourceFeeder::new(source, &cfg.augment, cfg.master_seed, "uda/source")?;
    let mut adam = adam_for(&model.params, cfg.lr_syn, cfg)?;
    for _ in 0..cfg.epochs_uda * adapt_count * cfg.source_steps_per_adapt {
        let (x, y) = feeder.next_pair();
        synth_l1_step(&mut model, &mut adam, x, y)?;
    }
    Ok(model)
}

/// Adaptation KL of `synth` over the whole of `target`, without updating
/// anything: the mean per-volume KL, or the KL of the full target mixture.
pub fn prior_kl(synth: &SynthModel, objective: &AdaptObjective<'_>, target: &[UnpairedSample]) -> Result<f64> {
    ensure!(!target.is_empty(), "nothing to score");
    let mut objective = objective.clone();
    objective.refresh(synth, target)?;
    let score = |i: usize| -> Result<f64> {
        let mut tape = Tape::new();
        let y = tape.constant(synth.forward(&target[i].input_batch())?);
        let kl = objective.kl_on(&mut tape, y, i)?;
        tape.value(kl).item()
    };
    match objective.reference {
        Reference::Mixture { .. } => score(0),
        Reference::StandardNormal => Ok((0..target.len()).map(score).sum::<Result<f64>>()? / target.len() as f64),
    }
}
