//! Central finite differences against reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uda3d::metrics::{kl_diag, kl_std_normal, l1_loss, l2_recon, KlDirection};
use uda3d::nets::{GaussianDiag, GaussianVars, SvaeConfig, SvaeModel, SynthConfig, SynthModel, Vae3dConfig, Vae3dModel};
use uda3d::phantom::{make_dataset, DatasetConfig, Dims};
use uda3d::pipeline::{mixture_kl, AdaptObjective, AdaptPrior, TrainConfig};
use uda3d::tensor::{Bound, ParamSet, Tape, Tensor, Var};
use uda3d::Result;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
const PROBES: usize = 12;

/// Worst relative error seen for one operation on one shape.
#[derive(Clone, Debug)]
pub struct Probe {
    pub label: String,
    pub worst: f64,
}

fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Reduces a non-scalar output with fixed random weights.
fn scalarize(tape: &mut Tape, y: Var) -> Result<Var> {
    if tape.value(y).numel() == 1 {
        return Ok(tape.sum(y));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let w = tape.constant(random(tape.shape(y), -1.0, 1.0, &mut rng));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn eval<F>(inputs: &[Tensor], f: &F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let y = f(&mut tape, &vars).unwrap();
    let l = scalarize(&mut tape, y).unwrap();
    tape.value(l).item().unwrap()
}

fn check<F>(out: &mut Vec<Probe>, label: String, inputs: Vec<Tensor>, f: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let y = f(&mut tape, &vars).unwrap();
    let l = scalarize(&mut tape, y).unwrap();
    let grads = tape.backward(l).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let n = inputs[i].numel();
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for _ in 0..PROBES.min(n) {
            let j = rng.random_range(0..n);
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= STEP;
            let numeric = (eval(&plus, &f) - eval(&minus, &f)) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    out.push(Probe { label, worst });
}

fn random_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = rng.random_range(1..=4);
    (0..rank).map(|_| rng.random_range(1..=4)).collect()
}

pub fn elementwise() -> Vec<Probe> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..6 {
        let s = random_shape(&mut rng);
        let a = random(&s, -1.0, 1.0, &mut rng);
        let b = random(&s, -1.0, 1.0, &mut rng);
        let pos = random(&s, 0.2, 2.0, &mut rng);
        let o = &mut out;
        let l = |op: &str| format!("{op} {s:?}");
        check(o, l("add"), vec![a.clone(), b.clone()], |t, v| t.add(v[0], v[1]));
        check(o, l("sub"), vec![a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]));
        check(o, l("mul"), vec![a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]));
        check(o, l("scale"), vec![a.clone()], |t, v| Ok(t.scale(v[0], -1.7)));
        check(o, l("add_scalar"), vec![a.clone()], |t, v| Ok(t.add_scalar(v[0], 0.3)));
        check(o, l("leaky_relu"), vec![a.clone()], |t, v| Ok(t.leaky_relu(v[0], 0.2)));
        check(o, l("relu"), vec![a.clone()], |t, v| Ok(t.relu(v[0])));
        check(o, l("tanh"), vec![a.clone()], |t, v| Ok(t.tanh(v[0])));
        check(o, l("sigmoid"), vec![a.clone()], |t, v| Ok(t.sigmoid(v[0])));
        check(o, l("exp"), vec![a.clone()], |t, v| Ok(t.exp(v[0])));
        check(o, l("log"), vec![pos], |t, v| t.log(v[0]));
        check(o, l("square"), vec![a.clone()], |t, v| Ok(t.square(v[0])));
        check(o, l("abs"), vec![a.clone()], |t, v| Ok(t.abs(v[0])));
        check(o, l("sum"), vec![a.clone()], |t, v| {
            let e = t.exp(v[0]);
            Ok(t.sum(e))
        });
        check(o, l("mean"), vec![a.clone()], |t, v| {
            let e = t.square(v[0]);
            Ok(t.mean(e))
        });
        check(o, l("flatten"), vec![a], |t, v| t.flatten(v[0]));
    }
    out
}

pub fn shape_ops() -> Vec<Probe> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..5 {
        let s = vec![rng.random_range(1..=3), rng.random_range(2..=4), rng.random_range(2..=5)];
        let a = random(&s, -1.0, 1.0, &mut rng);
        let b = random(&s, -1.0, 1.0, &mut rng);
        let axis = case % 3;
        let n: usize = s.iter().product();
        let o = &mut out;
        check(o, format!("reshape {s:?}"), vec![a.clone()], |t, v| t.reshape(v[0], &[n]));
        check(o, format!("concat {s:?} axis {axis}"), vec![a.clone(), b], |t, v| t.concat(&[v[0], v[1]], axis));
        check(o, format!("slice {s:?} axis {axis}"), vec![a.clone()], |t, v| t.slice(v[0], axis, s[axis] - 1, 1));
        let widths: Vec<(isize, isize)> =
            s.iter().enumerate().map(|(i, &e)| if i == axis { (1, -(e as isize - 1)) } else { (0, 1) }).collect();
        check(o, format!("pad_crop {s:?} {widths:?}"), vec![a], |t, v| t.pad_crop(v[0], &widths));
    }
    out
}

pub fn dense() -> Vec<Probe> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let (m, k, n) = (rng.random_range(1..=4), rng.random_range(1..=5), rng.random_range(1..=4));
        let a = random(&[m, k], -1.0, 1.0, &mut rng);
        let b = random(&[k, n], -1.0, 1.0, &mut rng);
        let w = random(&[n, k], -1.0, 1.0, &mut rng);
        let bias = random(&[n], -1.0, 1.0, &mut rng);
        check(&mut out, format!("matmul {m}x{k}x{n}"), vec![a.clone(), b], |t, v| t.matmul(v[0], v[1]));
        check(&mut out, format!("linear {m}x{k}->{n}"), vec![a, w, bias], |t, v| t.linear(v[0], v[1], v[2]));
    }
    out
}

#[derive(Clone, Copy, Debug)]
enum Kind {
    Conv2d,
    Conv3d,
    ConvT2d,
    ConvT3d,
}

fn conv_case(kind: Kind, rng: &mut ChaCha8Rng) -> (Vec<Tensor>, usize, usize) {
    let batch = rng.random_range(1..=2);
    let (ci, co) = (rng.random_range(1..=3), rng.random_range(1..=3));
    let k = rng.random_range(1..=3);
    let stride = rng.random_range(1..=2);
    let pad = rng.random_range(0..=1).min(k - 1);
    let n = rng.random_range(k.max(2)..=5);
    let (x_shape, w_shape): (Vec<usize>, Vec<usize>) = match kind {
        Kind::Conv2d => (vec![batch, ci, n, n + 1], vec![co, ci, k, k]),
        Kind::Conv3d => (vec![batch, ci, n, n, n], vec![co, ci, k, k, k]),
        Kind::ConvT2d => (vec![batch, ci, n, n], vec![ci, co, k, k]),
        Kind::ConvT3d => (vec![batch, ci, n, n, n], vec![ci, co, k, k, k]),
    };
    let x = random(&x_shape, -1.0, 1.0, rng);
    let w = random(&w_shape, -1.0, 1.0, rng);
    let b = random(&[co], -1.0, 1.0, rng);
    (vec![x, w, b], stride, pad)
}

/// Six random geometries for each of the four convolution kinds.
pub fn convolutions() -> Vec<Probe> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for kind in [Kind::Conv2d, Kind::Conv3d, Kind::ConvT2d, Kind::ConvT3d] {
        for _ in 0..6 {
            let (inputs, s, p) = conv_case(kind, &mut rng);
            let label = format!("{kind:?} x {:?} w {:?} s{s} p{p}", inputs[0].shape(), inputs[1].shape());
            check(&mut out, label, inputs, |t, v| match kind {
                Kind::Conv2d => t.conv2d(v[0], v[1], v[2], s, p),
                Kind::Conv3d => t.conv3d(v[0], v[1], v[2], s, p),
                Kind::ConvT2d => t.conv_transpose2d(v[0], v[1], v[2], s, p),
                Kind::ConvT3d => t.conv_transpose3d(v[0], v[1], v[2], s, p),
            });
        }
    }
    out
}

pub fn losses() -> Vec<Probe> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..4 {
        let s = random_shape(&mut rng);
        let a = random(&s, -1.0, 1.0, &mut rng);
        let b = random(&s, -1.0, 1.0, &mut rng);
        check(&mut out, format!("l1 {s:?}"), vec![a.clone(), b.clone()], |t, v| l1_loss(t, v[0], v[1]));
        check(&mut out, format!("l2 {s:?}"), vec![a, b], |t, v| l2_recon(t, v[0], v[1]));
        let (rows, d) = (rng.random_range(1..=4), rng.random_range(1..=6));
        let mu = random(&[rows, d], -2.0, 2.0, &mut rng);
        let lv = random(&[rows, d], -2.0, 2.0, &mut rng);
        for dir in [KlDirection::PosteriorToPrior, KlDirection::PriorToPosterior] {
            check(&mut out, format!("kl {dir:?} [{rows}, {d}]"), vec![mu.clone(), lv.clone()], |t, v| {
                kl_std_normal(t, GaussianVars { mean: v[0], log_var: v[1] }, dir)
            });
        }
        let reference = GaussianDiag::new(random(&[rows, d], -1.0, 1.0, &mut rng), random(&[rows, d], -1.0, 1.0, &mut rng))
            .unwrap();
        let others: Vec<GaussianDiag> = (0..rng.random_range(0..=3))
            .map(|_| {
                GaussianDiag::new(random(&[rows, d], -1.5, 1.5, &mut rng), random(&[rows, d], -1.5, 1.5, &mut rng)).unwrap()
            })
            .collect();
        let others: Vec<&GaussianDiag> = others.iter().collect();
        for dir in [KlDirection::PosteriorToPrior, KlDirection::PriorToPosterior] {
            check(&mut out, format!("kl to reference {dir:?} [{rows}, {d}]"), vec![mu.clone(), lv.clone()], |t, v| {
                kl_diag(t, GaussianVars { mean: v[0], log_var: v[1] }, &reference, dir)
            });
            let label = format!("mixture kl {dir:?} {} others [{rows}, {d}]", others.len());
            check(&mut out, label, vec![mu.clone(), lv.clone()], |t, v| {
                mixture_kl(t, GaussianVars { mean: v[0], log_var: v[1] }, &others, &reference, dir)
            });
        }
    }
    out
}

/// Probes random parameter coordinates; `f` binds the set it is given and
/// returns the scalar loss with the binding.
fn check_params<F>(out: &mut Vec<Probe>, label: &str, params: &ParamSet, probes: usize, f: F)
where
    F: Fn(&ParamSet, &mut Tape) -> Result<(Var, Bound)>,
{
    let mut tape = Tape::new();
    let (loss, bound) = f(params, &mut tape).unwrap();
    let grads = tape.backward(loss).unwrap();
    let value = |s: &ParamSet| {
        let mut t = Tape::new();
        let (l, _) = f(s, &mut t).unwrap();
        t.value(l).item().unwrap()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let i = rng.random_range(0..params.len());
        let j = rng.random_range(0..params.value(i).numel());
        let analytic = grads.get(bound.var(i)).map_or(0.0, |g| g.data()[j]);
        let mut plus = params.clone();
        plus.value_mut(i).data_mut()[j] += STEP;
        let mut minus = params.clone();
        minus.value_mut(i).data_mut()[j] -= STEP;
        let numeric = (value(&plus) - value(&minus)) / (2.0 * STEP);
        worst = worst.max(rel_err(analytic, numeric));
    }
    out.push(Probe { label: label.into(), worst });
}

fn small_synth(seed: u64) -> SynthModel {
    let cfg = SynthConfig { base_channels: 2, down_stages: 1, res_blocks: 1, ..SynthConfig::default() };
    SynthModel::new(cfg, seed).unwrap()
}

fn small_svae(seed: u64) -> SvaeModel {
    SvaeModel::new(SvaeConfig { image: 8, latent_dim: 4, base_channels: 2, stages: 2, ..SvaeConfig::default() }, seed).unwrap()
}

/// Parameter gradients of whole networks and of the adaptation objective.
pub fn networks() -> Vec<Probe> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(21);

    let synth = small_synth(3);
    let x = random(&[1, 2, 4, 4, 4], -1.0, 1.0, &mut rng);
    check_params(&mut out, "synth [1, 2, 4, 4, 4]", &synth.params, 40, |ps, tape| {
        let b = ps.bind(tape, true);
        let xv = tape.constant(x.clone());
        let y = synth.forward_on(tape, &b, xv)?;
        Ok((scalarize(tape, y)?, b))
    });

    let svae = small_svae(5);
    let slices = random(&[3, 1, 8, 8], -1.0, 1.0, &mut rng);
    let eps = random(&[3, 4], -1.0, 1.0, &mut rng);
    check_params(&mut out, "s-VAE elbo [3, 1, 8, 8]", &svae.params, 40, |ps, tape| {
        let b = ps.bind(tape, true);
        let x = tape.constant(slices.clone());
        let g = svae.encode_on(tape, &b, x)?;
        let kl = kl_std_normal(tape, g, KlDirection::PosteriorToPrior)?;
        let e = tape.constant(eps.clone());
        let half = tape.scale(g.log_var, 0.5);
        let sd = tape.exp(half);
        let n = tape.mul(sd, e)?;
        let z = tape.add(g.mean, n)?;
        let r = svae.decode_on(tape, &b, z)?;
        let l2 = l2_recon(tape, r, x)?;
        let kw = tape.scale(kl, 0.1);
        Ok((tape.add(l2, kw)?, b))
    });

    let vae =
        Vae3dModel::new(Vae3dConfig { volume: 4, latent_dim: 3, base_channels: 2, stages: 1, ..Vae3dConfig::default() }, 6)
            .unwrap();
    let v = random(&[1, 1, 4, 4, 4], -1.0, 1.0, &mut rng);
    check_params(&mut out, "3D-VAE encoder [1, 1, 4, 4, 4]", &vae.params, 30, |ps, tape| {
        let b = ps.bind(tape, true);
        let x = tape.constant(v.clone());
        let g = vae.encode_on(tape, &b, x)?;
        Ok((kl_std_normal(tape, g, KlDirection::PosteriorToPrior)?, b))
    });

    let synth = small_synth(8);
    let mut prior = small_svae(9);
    prior.params.freeze();
    let x = random(&[1, 2, 8, 8, 8], -1.0, 1.0, &mut rng);
    let p = AdaptPrior::Slices(&prior);
    check_params(&mut out, "adaptation KL through frozen s-VAE [1, 2, 8, 8, 8]", &synth.params, 30, |ps, tape| {
        let b = ps.bind(tape, true);
        let xv = tape.constant(x.clone());
        let y = synth.forward_on(tape, &b, xv)?;
        Ok((p.kl_on(tape, y, KlDirection::PosteriorToPrior)?, b))
    });

    let data = DatasetConfig { dims: Dims::cube(8), source_train: 3, target_adapt: 3, target_test: 1, ..Default::default() };
    let split = make_dataset(&data, 12).unwrap();
    let mut objective = AdaptObjective::new(p, &split.source_train, &TrainConfig::default()).unwrap();
    objective.refresh(&synth, &split.target_adapt).unwrap();
    let live = split.target_adapt[1].input_batch();
    check_params(&mut out, "source-mixture adaptation KL [1, 2, 8, 8, 8]", &synth.params, 30, |ps, tape| {
        let b = ps.bind(tape, true);
        let xv = tape.constant(live.clone());
        let y = synth.forward_on(tape, &b, xv)?;
        Ok((objective.kl_on(tape, y, 1)?, b))
    });
    out
}

/// Every suite above.
pub fn all() -> Vec<Probe> {
    [elementwise(), shape_ops(), dense(), convolutions(), losses(), networks()].concat()
}

pub fn assert_within_tolerance(probes: &[Probe]) {
    for p in probes {
        assert!(p.worst < TOLERANCE, "{}: relative error {:.3e}", p.label, p.worst);
    }
}
