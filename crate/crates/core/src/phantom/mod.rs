//! Procedural multi-modal phantom volumes with controllable domain shift.
//!
//! One tissue grid is shared by all modalities and all domains; a
//! [`DomainSpec`] decides how each tissue class is rendered. Changing the
//! domain changes intensities only, never anatomy.

mod augment;
mod dataset;
pub mod volio;

pub use augment::{augment, flip, rotate90, AugmentSpec};
pub use dataset::{
    make_control_sets, make_dataset, ControlSets, DatasetConfig, DatasetSplit, UnpairedSample,
};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::rng::{seeded, stream};
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 5;
pub const BACKGROUND: u8 = 0;
pub const TISSUE_A: u8 = 1;
pub const TISSUE_B: u8 = 2;
pub const FLUID: u8 = 3;
pub const LESION: u8 = 4;

/// Volume extents (slices, height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn cube(n: usize) -> Self {
        Dims { d: n, h: n, w: n }
    }

    pub fn voxels(&self) -> usize {
        self.d * self.h * self.w
    }
}

impl Default for Dims {
    fn default() -> Self {
        Dims::cube(32)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TissueVolume {
    pub dims: Dims,
    pub labels: Vec<u8>,
    pub seed: u64,
}

impl TissueVolume {
    pub fn class_fraction(&self, class: u8) -> f64 {
        self.labels.iter().filter(|&&l| l == class).count() as f64 / self.labels.len() as f64
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.labels.iter().map(|&l| f64::from(l)).collect();
        Tensor::from_parts(vec![self.dims.d, self.dims.h, self.dims.w], data)
    }

    pub fn from_tensor(t: &Tensor, seed: u64) -> Result<Self> {
        ensure!(t.rank() == 3, "label tensor must be rank 3, got {:?}", t.shape());
        let labels = t
            .data()
            .iter()
            .map(|&v| {
                ensure!(
                    v >= 0.0 && v < NUM_CLASSES as f64 && v.fract() == 0.0,
                    "invalid label value {v}"
                );
                Ok(v as u8)
            })
            .collect::<Result<Vec<_>>>()?;
        let s = t.shape();
        Ok(TissueVolume { dims: Dims { d: s[0], h: s[1], w: s[2] }, labels, seed })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    pub lesion: bool,
    /// Peak amplitude of the sinusoidal displacement, in normalised units.
    pub warp: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams { lesion: true, warp: 0.06 }
    }
}

struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn level(&self, p: [f64; 3]) -> f64 {
        (0..3).map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2)).sum()
    }
}

/// Generates a deterministic tissue grid: head ellipsoid, tissue-A shell,
/// tissue-B core, two fluid pockets and an optional lesion, all warped by a
/// low-frequency sinusoidal displacement field.
pub fn generate_phantom(seed: u64, dims: Dims, params: &PhantomParams) -> Result<TissueVolume> {
    ensure!(
        dims.d >= 8 && dims.h >= 8 && dims.w >= 8,
        "phantom extents must each be >= 8, got {dims:?}"
    );
    let mut rng = seeded(seed);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);

    let head = Ellipsoid {
        center: [u(-0.04, 0.04), u(-0.04, 0.04), u(-0.04, 0.04)],
        radii: [u(0.72, 0.86), u(0.74, 0.88), u(0.66, 0.80)],
    };
    let core_scale = u(0.55, 0.68);
    let core = Ellipsoid {
        center: [head.center[0] + u(-0.03, 0.03), head.center[1] + u(-0.03, 0.03), head.center[2]],
        radii: [
            head.radii[0] * core_scale,
            head.radii[1] * core_scale * u(0.95, 1.05),
            head.radii[2] * core_scale * u(0.95, 1.05),
        ],
    };
    // Paired pockets mirrored across the mid-sagittal plane.
    let pocket_off = u(0.10, 0.16);
    let pocket_r = [u(0.18, 0.28), u(0.10, 0.16), u(0.06, 0.09)];
    let pocket_y = u(-0.08, 0.04);
    let pockets = [-1.0, 1.0].map(|side| Ellipsoid {
        center: [core.center[0] + u(-0.05, 0.05), core.center[1] + pocket_y, core.center[2] + side * pocket_off],
        radii: pocket_r,
    });
    let lesion = params.lesion.then(|| {
        let r = u(0.09, 0.16);
        let ang = u(0.0, std::f64::consts::TAU);
        let rad = u(0.25, 0.5);
        Ellipsoid {
            center: [
                head.center[0] + u(-0.3, 0.3),
                head.center[1] + rad * ang.sin() * head.radii[1],
                head.center[2] + rad * ang.cos() * head.radii[2],
            ],
            radii: [r * u(0.8, 1.2), r, r * u(0.8, 1.2)],
        }
    });

    // Displacement: three sinusoids per axis with random phases.
    let mut waves = Vec::new();
    for _ in 0..3 {
        let mut axis_waves = Vec::new();
        for _ in 0..3 {
            let freq = [u(0.5, 1.5), u(0.5, 1.5), u(0.5, 1.5)];
            let phase = u(0.0, std::f64::consts::TAU);
            let amp = params.warp * u(0.3, 1.0);
            axis_waves.push((freq, phase, amp));
        }
        waves.push(axis_waves);
    }

    let coord = |i: usize, n: usize| 2.0 * (i as f64 + 0.5) / n as f64 - 1.0;
    let mut labels = Vec::with_capacity(dims.voxels());
    for z in 0..dims.d {
        for y in 0..dims.h {
            for x in 0..dims.w {
                let p0 = [coord(z, dims.d), coord(y, dims.h), coord(x, dims.w)];
                let mut p = p0;
                for (a, axis_waves) in waves.iter().enumerate() {
                    for (freq, phase, amp) in axis_waves {
                        let arg = std::f64::consts::PI
                            * (freq[0] * p0[0] + freq[1] * p0[1] + freq[2] * p0[2])
                            + phase;
                        p[a] += amp * arg.sin();
                    }
                }
                let label = if head.level(p) > 1.0 {
                    BACKGROUND
                } else if lesion.as_ref().is_some_and(|l| l.level(p) <= 1.0) {
                    LESION
                } else if pockets.iter().any(|e| e.level(p) <= 1.0) {
                    FLUID
                } else if core.level(p) <= 1.0 {
                    TISSUE_B
                } else {
                    TISSUE_A
                };
                labels.push(label);
            }
        }
    }
    Ok(TissueVolume { dims, labels, seed })
}

/// Which rendered modality a table refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    In1,
    In2,
    Out,
}

/// Acquisition characteristics of one domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub id: String,
    /// Mean intensity in `[0, 1]` per tissue class, for each modality.
    pub in1: [f64; NUM_CLASSES],
    pub in2: [f64; NUM_CLASSES],
    pub out: [f64; NUM_CLASSES],
    pub gamma: f64,
    pub contrast: f64,
    pub brightness: f64,
    pub noise_sigma: f64,
}

impl DomainSpec {
    /// Default source domain: unit transfer curve, mild noise.
    pub fn source() -> Self {
        DomainSpec {
            id: "source".into(),
            in1: [0.0, 0.50, 0.66, 0.92, 0.80],
            in2: [0.0, 0.42, 0.58, 0.96, 0.74],
            out: [0.0, 0.82, 0.62, 0.16, 0.40],
            gamma: 1.0,
            contrast: 1.0,
            brightness: 0.0,
            noise_sigma: 0.02,
        }
    }

    /// Default target domain: different input tissue contrasts and a
    /// different transfer curve over the same anatomy.
    pub fn target() -> Self {
        DomainSpec {
            id: "target".into(),
            in1: [0.0, 0.62, 0.74, 0.86, 0.95],
            in2: [0.0, 0.30, 0.52, 0.88, 0.66],
            out: [0.0, 0.80, 0.60, 0.18, 0.42],
            gamma: 0.8,
            contrast: 0.92,
            brightness: 0.04,
            noise_sigma: 0.03,
        }
    }

    pub fn table(&self, m: Modality) -> &[f64; NUM_CLASSES] {
        match m {
            Modality::In1 => &self.in1,
            Modality::In2 => &self.in2,
            Modality::Out => &self.out,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in [&self.in1, &self.in2, &self.out] {
            ensure!(
                t.iter().all(|v| (0.0..=1.0).contains(v)),
                "domain {}: intensity table values must lie in [0, 1]",
                self.id
            );
        }
        ensure!(self.gamma > 0.0 && self.contrast > 0.0, "domain {}: gamma and contrast must be positive", self.id);
        ensure!(self.noise_sigma >= 0.0, "domain {}: noise sigma must be non-negative", self.id);
        Ok(())
    }

    /// Noise-free rendered intensity of `class` in `[0, 1]`.
    pub fn clean_intensity(&self, m: Modality, class: u8) -> f64 {
        let base = self.table(m)[class as usize];
        (self.contrast * base.powf(self.gamma) + self.brightness).clamp(0.0, 1.0)
    }
}

/// Maps `[0, 1]` intensities onto the network range `[-1, 1]`.
pub fn to_network_range(v: f64) -> f64 {
    2.0 * v - 1.0
}

pub fn from_network_range(v: f64) -> f64 {
    (v + 1.0) / 2.0
}

/// One rendered case. `inputs` is `[2, D, H, W]`, `target` is `[1, D, H, W]`,
/// both in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeSample {
    pub case_id: String,
    pub domain_id: String,
    pub inputs: Tensor,
    pub target: Tensor,
    pub labels: TissueVolume,
}

impl VolumeSample {
    pub fn dims(&self) -> Dims {
        self.labels.dims
    }

    /// Inputs shaped as a network batch `[1, 2, D, H, W]`.
    pub fn input_batch(&self) -> Tensor {
        let mut s = vec![1];
        s.extend_from_slice(self.inputs.shape());
        Tensor::from_parts(s, self.inputs.data().to_vec())
    }

    pub fn target_batch(&self) -> Tensor {
        let mut s = vec![1];
        s.extend_from_slice(self.target.shape());
        Tensor::from_parts(s, self.target.data().to_vec())
    }
}

fn render_modality(tissue: &TissueVolume, domain: &DomainSpec, m: Modality, rng: &mut crate::rng::Rng) -> Vec<f64> {
    let lut: Vec<f64> = (0..NUM_CLASSES as u8).map(|c| domain.clean_intensity(m, c)).collect();
    let noise = (domain.noise_sigma > 0.0).then(|| Normal::new(0.0, domain.noise_sigma).expect("valid sigma"));
    tissue
        .labels
        .iter()
        .map(|&l| {
            let base = domain.table(m)[l as usize];
            let v = match &noise {
                Some(n) => (domain.contrast * base.powf(domain.gamma) + domain.brightness + n.sample(rng)).clamp(0.0, 1.0),
                None => lut[l as usize],
            };
            to_network_range(v)
        })
        .collect()
}

/// Renders all three modalities of `tissue` under `domain`.
pub fn render_sample(
    tissue: &TissueVolume,
    domain: &DomainSpec,
    noise_seed: u64,
    case_id: impl Into<String>,
) -> Result<VolumeSample> {
    domain.validate()?;
    let Dims { d, h, w } = tissue.dims;
    let mut inputs = render_modality(tissue, domain, Modality::In1, &mut stream(noise_seed, "in1", 0));
    inputs.extend(render_modality(tissue, domain, Modality::In2, &mut stream(noise_seed, "in2", 0)));
    let target = render_modality(tissue, domain, Modality::Out, &mut stream(noise_seed, "out", 0));
    Ok(VolumeSample {
        case_id: case_id.into(),
        domain_id: domain.id.clone(),
        inputs: Tensor::from_parts(vec![2, d, h, w], inputs),
        target: Tensor::from_parts(vec![1, d, h, w], target),
        labels: tissue.clone(),
    })
}

/// Normalised intensity histogram over `[-1, 1]`.
pub fn histogram(values: &[f64], bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    for &v in values {
        let t = ((v.clamp(-1.0, 1.0) + 1.0) / 2.0 * bins as f64) as usize;
        h[t.min(bins - 1)] += 1.0;
    }
    let n = values.len().max(1) as f64;
    h.iter_mut().for_each(|x| *x /= n);
    h
}

pub fn histogram_l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_is_deterministic() {
        let p = PhantomParams::default();
        let a = generate_phantom(11, Dims::cube(16), &p).unwrap();
        let b = generate_phantom(11, Dims::cube(16), &p).unwrap();
        assert_eq!(a, b);
        let c = generate_phantom(12, Dims::cube(16), &p).unwrap();
        assert_ne!(a.labels, c.labels);
    }

    #[test]
    fn background_fraction_in_range() {
        let t = generate_phantom(0, Dims::cube(32), &PhantomParams::default()).unwrap();
        let bg = t.class_fraction(BACKGROUND);
        assert!(bg > 0.2 && bg < 0.9, "background fraction {bg}");
        for c in 1..NUM_CLASSES as u8 {
            assert!(t.class_fraction(c) > 0.0, "class {c} missing");
        }
    }

    #[test]
    fn lesion_can_be_disabled() {
        let p = PhantomParams { lesion: false, ..Default::default() };
        for seed in 0..4 {
            let t = generate_phantom(seed, Dims::cube(16), &p).unwrap();
            assert!(t.labels.iter().all(|&l| l != LESION));
        }
    }

    #[test]
    fn small_dims_rejected() {
        assert!(generate_phantom(0, Dims { d: 7, h: 16, w: 16 }, &PhantomParams::default()).is_err());
    }

    #[test]
    fn noise_free_single_class_is_constant() {
        let tissue = TissueVolume { dims: Dims::cube(8), labels: vec![TISSUE_B; 512], seed: 0 };
        let mut dom = DomainSpec::target();
        dom.noise_sigma = 0.0;
        let s = render_sample(&tissue, &dom, 3, "c").unwrap();
        for ch in 0..2 {
            let chan = &s.inputs.data()[ch * 512..(ch + 1) * 512];
            assert!(chan.iter().all(|&v| v == chan[0]));
        }
        assert!(s.target.data().iter().all(|&v| v == s.target.data()[0]));
    }

    #[test]
    fn identity_transfer_reproduces_tables() {
        let tissue = generate_phantom(4, Dims::cube(12), &PhantomParams::default()).unwrap();
        let mut dom = DomainSpec::source();
        dom.noise_sigma = 0.0;
        let s = render_sample(&tissue, &dom, 0, "c").unwrap();
        let n = tissue.labels.len();
        for (i, &l) in tissue.labels.iter().enumerate() {
            assert!((from_network_range(s.inputs.data()[i]) - dom.in1[l as usize]).abs() < 1e-12);
            assert!((from_network_range(s.inputs.data()[n + i]) - dom.in2[l as usize]).abs() < 1e-12);
            assert!((from_network_range(s.target.data()[i]) - dom.out[l as usize]).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_changes_intensities_not_anatomy() {
        let tissue = generate_phantom(0, Dims::cube(16), &PhantomParams::default()).unwrap();
        let a = DomainSpec::source();
        let mut b = a.clone();
        b.gamma = 0.6;
        let sa = render_sample(&tissue, &a, 9, "c").unwrap();
        let sb = render_sample(&tissue, &b, 9, "c").unwrap();
        assert_eq!(sa.labels, sb.labels);
        let dist = histogram_l1(&histogram(sa.target.data(), 32), &histogram(sb.target.data(), 32));
        assert!(dist > 0.0);
    }

    #[test]
    fn rendered_values_in_network_range() {
        let tissue = generate_phantom(2, Dims::cube(16), &PhantomParams::default()).unwrap();
        let mut dom = DomainSpec::target();
        dom.noise_sigma = 0.5;
        let s = render_sample(&tissue, &dom, 1, "c").unwrap();
        assert!(s.inputs.data().iter().chain(s.target.data()).all(|v| (-1.0..=1.0).contains(v)));
    }
}
