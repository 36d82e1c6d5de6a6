use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub dynamic_range: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig { window: 11, sigma: 1.5, dynamic_range: 2.0, k1: 0.01, k2: 0.03 }
    }
}

impl SsimConfig {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalised 1D Gaussian taps; the 2D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let c = (self.window as f64 - 1.0) / 2.0;
        let raw: Vec<f64> =
            (0..self.window).map(|i| (-(i as f64 - c).powi(2) / (2.0 * self.sigma * self.sigma)).exp()).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }
}

/// Valid-mode separable filtering of one `h x w` slice.
fn filter(img: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &img[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (i, t) in taps.iter().enumerate() {
            let src = &rows[(y + i) * ow..(y + i + 1) * ow];
            for (o, v) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                *o += t * v;
            }
        }
    }
    out
}

/// Mean SSIM over valid windows of each slice (the last two axes), then
/// averaged over slices.
pub fn ssim(a: &Tensor, b: &Tensor, cfg: &SsimConfig) -> Result<f64> {
    a.check_same_shape(b)?;
    ensure!(a.rank() >= 2, "ssim needs at least 2 axes, got {:?}", a.shape());
    let r = a.rank();
    let (h, w) = (a.shape()[r - 2], a.shape()[r - 1]);
    ensure!(
        h >= cfg.window && w >= cfg.window,
        "slice {h}x{w} is smaller than the {}-wide ssim window",
        cfg.window
    );
    ensure!(cfg.window > 0 && cfg.sigma > 0.0 && cfg.dynamic_range > 0.0, "invalid ssim configuration");
    let taps = cfg.taps();
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let plane = h * w;
    let slices = a.numel() / plane;
    let mut total = 0.0;
    for s in 0..slices {
        let x = &a.data()[s * plane..(s + 1) * plane];
        let y = &b.data()[s * plane..(s + 1) * plane];
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let [mx, my, fxx, fyy, fxy] = [x, y, &xx[..], &yy[..], &xy[..]].map(|img| filter(img, h, w, &taps));
        let n = mx.len();
        let mut acc = 0.0;
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let vx = fxx[i] - ux * ux;
            let vy = fyy[i] - uy * uy;
            let cov = fxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / n as f64;
    }
    Ok(total / slices as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::standard_normal;
    use crate::rng::seeded;

    /// Direct 2D sliding window with the outer-product kernel.
    fn brute(a: &Tensor, b: &Tensor, cfg: &SsimConfig) -> f64 {
        let r = a.rank();
        let (h, w) = (a.shape()[r - 2], a.shape()[r - 1]);
        let k = cfg.window;
        let t = cfg.taps();
        let (c1, c2) = (cfg.c1(), cfg.c2());
        let slices = a.numel() / (h * w);
        let mut sum_slices = 0.0;
        for s in 0..slices {
            let at = |d: &Tensor, y: usize, x: usize| d.data()[s * h * w + y * w + x];
            let mut acc = 0.0;
            let mut count = 0;
            for y0 in 0..=h - k {
                for x0 in 0..=w - k {
                    let (mut ux, mut uy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..k {
                        for j in 0..k {
                            let g = t[i] * t[j];
                            let p = at(a, y0 + i, x0 + j);
                            let q = at(b, y0 + i, x0 + j);
                            ux += g * p;
                            uy += g * q;
                            sxx += g * p * p;
                            syy += g * q * q;
                            sxy += g * p * q;
                        }
                    }
                    let vx = sxx - ux * ux;
                    let vy = syy - uy * uy;
                    let cv = sxy - ux * uy;
                    acc += ((2.0 * ux * uy + c1) * (2.0 * cv + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
                    count += 1;
                }
            }
            sum_slices += acc / count as f64;
        }
        sum_slices / slices as f64
    }

    #[test]
    fn window_is_normalised() {
        let cfg = SsimConfig::default();
        let t = cfg.taps();
        let total: f64 = t.iter().flat_map(|a| t.iter().map(move |b| a * b)).sum();
        assert!((total - 1.0).abs() < 1e-14);
        assert!(cfg.c1() > 0.0 && cfg.c2() > 0.0);
    }

    #[test]
    fn identical_is_exactly_one() {
        let a = standard_normal(&[3, 16, 20], &mut seeded(1)).map(f64::tanh);
        assert_eq!(ssim(&a, &a, &SsimConfig::default()).unwrap(), 1.0);
    }

    #[test]
    fn constant_images_closed_form() {
        let cfg = SsimConfig { dynamic_range: 1.0, ..SsimConfig::default() };
        let a = Tensor::full(&[2, 12, 12], 0.5);
        let b = Tensor::full(&[2, 12, 12], 0.25);
        let c1 = 1e-4;
        let expect = (2.0 * 0.5 * 0.25 + c1) / (0.25 + 0.0625 + c1);
        let got = ssim(&a, &b, &cfg).unwrap();
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
        assert!((got - 0.8001).abs() < 1e-3);
    }

    #[test]
    fn matches_brute_force_and_is_symmetric() {
        let cfg = SsimConfig::default();
        let mut rng = seeded(7);
        let a = standard_normal(&[1, 1, 4, 17, 23], &mut rng).map(|v| (0.5 * v).tanh());
        let n = standard_normal(&[1, 1, 4, 17, 23], &mut rng);
        let b = a.zip_map(&n, |x, e| (x + 0.3 * e).clamp(-1.0, 1.0)).unwrap();
        let fast = ssim(&a, &b, &cfg).unwrap();
        assert!((fast - brute(&a, &b, &cfg)).abs() < 1e-9);
        assert!((fast - ssim(&b, &a, &cfg).unwrap()).abs() < 1e-12);
        assert!(fast < 1.0 && fast > -1.0);
    }

    #[test]
    fn rejects_small_slices() {
        let a = Tensor::zeros(&[2, 10, 32]);
        assert!(ssim(&a, &a, &SsimConfig::default()).is_err());
    }
}
