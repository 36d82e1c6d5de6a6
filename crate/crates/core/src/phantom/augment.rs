use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{from_network_range, to_network_range, TissueVolume, VolumeSample};
use crate::tensor::Tensor;

/// Training-time augmentation. Rotations are multiples of 90° in the axial
/// (height, width) plane; flips act on any axis; the contrast and brightness
/// factors are drawn from `(lo, hi]` and act on the input modalities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    pub rotation: bool,
    pub flip: bool,
    pub intensity: bool,
    pub intensity_range: (f64, f64),
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec { rotation: true, flip: true, intensity: false, intensity_range: (0.3, 1.5) }
    }
}

impl AugmentSpec {
    pub fn none() -> Self {
        AugmentSpec { rotation: false, flip: false, intensity: false, ..Default::default() }
    }

    pub fn is_identity(&self) -> bool {
        !(self.rotation || self.flip || self.intensity)
    }

    /// Draws a factor from `(lo, hi]`.
    pub fn draw_factor<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = self.intensity_range;
        hi - rng.random::<f64>() * (hi - lo)
    }
}

/// Applies `f(channel, d, h, w) -> source flat index` to every channel of a
/// `[C, D, H, W]` volume laid out with the given output dims.
fn remap<T: Copy>(src: &[T], channels: usize, out: [usize; 3], f: impl Fn(usize, usize, usize) -> usize) -> Vec<T> {
    let [d, h, w] = out;
    let per = d * h * w;
    let mut dst = Vec::with_capacity(src.len());
    for c in 0..channels {
        let base = c * per;
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    dst.push(src[base + f(z, y, x)]);
                }
            }
        }
    }
    dst
}

fn flip_index(dims: [usize; 3], axis: usize) -> impl Fn(usize, usize, usize) -> usize + Copy {
    let [_, h, w] = dims;
    move |z, y, x| {
        let (mut z, mut y, mut x) = (z, y, x);
        match axis {
            0 => z = dims[0] - 1 - z,
            1 => y = h - 1 - y,
            _ => x = w - 1 - x,
        }
        (z * h + y) * w + x
    }
}

fn rot_index(dims: [usize; 3]) -> impl Fn(usize, usize, usize) -> usize + Copy {
    // Output has extents (d, w, h); out[z][i][j] = in[z][j][w - 1 - i].
    let [_, h, w] = dims;
    move |z, i, j| (z * h + j) * w + (w - 1 - i)
}

fn map_sample(
    s: &VolumeSample,
    out_dims: [usize; 3],
    f: impl Fn(usize, usize, usize) -> usize + Copy,
) -> VolumeSample {
    let [d, h, w] = out_dims;
    let inputs = remap(s.inputs.data(), 2, out_dims, f);
    let target = remap(s.target.data(), 1, out_dims, f);
    let labels = remap(&s.labels.labels, 1, out_dims, f);
    VolumeSample {
        case_id: s.case_id.clone(),
        domain_id: s.domain_id.clone(),
        inputs: Tensor::from_parts(vec![2, d, h, w], inputs),
        target: Tensor::from_parts(vec![1, d, h, w], target),
        labels: TissueVolume { dims: super::Dims { d, h, w }, labels, seed: s.labels.seed },
    }
}

/// Mirrors a sample along axis 0 (slices), 1 (height) or 2 (width).
pub fn flip(s: &VolumeSample, axis: usize) -> VolumeSample {
    let dm = s.dims();
    let dims = [dm.d, dm.h, dm.w];
    map_sample(s, dims, flip_index(dims, axis))
}

/// Rotates a sample by `quarter_turns * 90°` in the axial plane.
pub fn rotate90(s: &VolumeSample, quarter_turns: usize) -> VolumeSample {
    let mut cur = s.clone();
    for _ in 0..quarter_turns % 4 {
        let dm = cur.dims();
        let dims = [dm.d, dm.h, dm.w];
        cur = map_sample(&cur, [dm.d, dm.w, dm.h], rot_index(dims));
    }
    cur
}

fn adjust_intensity(inputs: &mut Tensor, contrast: f64, brightness: f64) {
    let per = inputs.numel() / 2;
    for chan in inputs.data_mut().chunks_mut(per) {
        let mean = chan.iter().map(|&v| from_network_range(v)).sum::<f64>() / per as f64;
        for v in chan.iter_mut() {
            let u = ((from_network_range(*v) - mean) * contrast + mean) * brightness;
            *v = to_network_range(u.clamp(0.0, 1.0));
        }
    }
}

/// Draws and applies one random augmentation. Geometric transforms act on
/// inputs, target and labels alike; intensity factors touch inputs only.
pub fn augment<R: Rng + ?Sized>(s: &VolumeSample, spec: &AugmentSpec, rng: &mut R) -> VolumeSample {
    let mut out = s.clone();
    if spec.rotation {
        let k = rng.random_range(0..4);
        out = rotate90(&out, k);
    }
    if spec.flip {
        for axis in 0..3 {
            if rng.random_bool(0.5) {
                out = flip(&out, axis);
            }
        }
    }
    if spec.intensity {
        let contrast = spec.draw_factor(rng);
        let brightness = spec.draw_factor(rng);
        adjust_intensity(&mut out.inputs, contrast, brightness);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, render_sample, Dims, DomainSpec, PhantomParams};
    use crate::rng::seeded;

    fn sample(dims: Dims) -> VolumeSample {
        let t = generate_phantom(1, dims, &PhantomParams::default()).unwrap();
        render_sample(&t, &DomainSpec::source(), 2, "case").unwrap()
    }

    #[test]
    fn disabled_is_identity() {
        let s = sample(Dims::cube(8));
        let out = augment(&s, &AugmentSpec::none(), &mut seeded(0));
        assert_eq!(out, s);
    }

    #[test]
    fn double_flip_is_identity() {
        let s = sample(Dims { d: 8, h: 10, w: 12 });
        for axis in 0..3 {
            let once = flip(&s, axis);
            assert_ne!(once, s);
            assert_eq!(flip(&once, axis), s);
        }
    }

    #[test]
    fn four_rotations_are_identity() {
        let s = sample(Dims { d: 8, h: 10, w: 12 });
        let r = rotate90(&s, 1);
        assert_eq!(r.dims(), Dims { d: 8, h: 12, w: 10 });
        assert_eq!(rotate90(&r, 3), s);
        let (h, w) = (10, 12);
        for &(z, i, j) in &[(0, 0, 0), (3, 11, 9), (7, 5, 2)] {
            let src = (z * h + j) * w + (w - 1 - i);
            let dst = (z * w + i) * h + j;
            assert_eq!(r.labels.labels[dst], s.labels.labels[src]);
            assert_eq!(r.target.data()[dst], s.target.data()[src]);
        }
    }

    #[test]
    fn unit_factors_leave_channels_unchanged() {
        let s = sample(Dims::cube(8));
        let mut inputs = s.inputs.clone();
        adjust_intensity(&mut inputs, 1.0, 1.0);
        assert!(inputs.max_abs_diff(&s.inputs).unwrap() < 1e-12);
    }

    #[test]
    fn intensity_only_touches_inputs() {
        let s = sample(Dims::cube(8));
        let spec = AugmentSpec { rotation: false, flip: false, intensity: true, ..Default::default() };
        let out = augment(&s, &spec, &mut seeded(4));
        assert_eq!(out.target, s.target);
        assert_eq!(out.labels, s.labels);
        assert_ne!(out.inputs, s.inputs);
    }

    #[test]
    fn factors_lie_in_half_open_interval() {
        let spec = AugmentSpec::default();
        let mut rng = seeded(9);
        for _ in 0..10_000 {
            let f = spec.draw_factor(&mut rng);
            assert!(f > 0.3 && f <= 1.5);
        }
    }
}
