//! Binary PPM (P6) figures.

use std::path::Path;

use super::tables::write_file;
use crate::error::{ensure, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pixmap {
    pub width: usize,
    pub height: usize,
    pub comment: String,
    pub rgb: Vec<u8>,
}

impl Pixmap {
    pub fn new(width: usize, height: usize, comment: impl Into<String>) -> Self {
        Pixmap { width, height, comment: comment.into(), rgb: vec![0; 3 * width * height] }
    }

    pub fn filled(width: usize, height: usize, comment: impl Into<String>, color: [u8; 3]) -> Self {
        let mut p = Pixmap::new(width, height, comment);
        p.rgb.chunks_exact_mut(3).for_each(|px| px.copy_from_slice(&color));
        p
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [u8; 3]) {
        if x < self.width && y < self.height {
            let i = 3 * (y * self.width + x);
            self.rgb[i..i + 3].copy_from_slice(&c);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.rgb.len() + 128);
        out.extend_from_slice(b"P6\n");
        for line in self.comment.lines() {
            out.extend_from_slice(format!("# {line}\n").as_bytes());
        }
        out.extend_from_slice(format!("{} {}\n255\n", self.width, self.height).as_bytes());
        out.extend_from_slice(&self.rgb);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }
}

/// `[-1, 1]` to an 8-bit gray level.
pub fn gray_level(v: f64) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) / 2.0) * 255.0).round() as u8
}

/// Black-red-yellow-white ramp over `t` in `[0, 1]`.
pub fn hot(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * 3.0;
    let c = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    [c(t), c(t - 1.0), c(t - 2.0)]
}

/// Middle axial slice of a `[..., D, H, W]` volume as `(h, w, values)`.
pub fn middle_slice(v: &Tensor) -> Result<(usize, usize, Vec<f64>)> {
    let r = v.rank();
    ensure!(r >= 3, "expected a volume, got shape {:?}", v.shape());
    let (d, h, w) = (v.shape()[r - 3], v.shape()[r - 2], v.shape()[r - 1]);
    ensure!(v.numel() == d * h * w, "expected a single-channel volume, got {:?}", v.shape());
    let z = d / 2;
    Ok((h, w, v.data()[z * h * w..(z + 1) * h * w].to_vec()))
}

/// One row per case: truth, prediction and `|truth - prediction|`. Gray
/// columns map `[-1, 1]` linearly to 0..255; the difference column uses a
/// hot ramp scaled by the largest difference in the figure.
pub fn montage(truths: &[Tensor], preds: &[Tensor]) -> Result<Pixmap> {
    ensure!(!truths.is_empty() && truths.len() == preds.len(), "montage needs matching, non-empty case lists");
    let mut tiles = Vec::with_capacity(truths.len());
    for (t, p) in truths.iter().zip(preds) {
        ensure!(t.numel() == p.numel(), "truth and prediction differ in size");
        let (h, w, a) = middle_slice(t)?;
        let (_, _, b) = middle_slice(p)?;
        tiles.push((h, w, a, b));
    }
    let (h, w) = (tiles[0].0, tiles[0].1);
    ensure!(tiles.iter().all(|t| t.0 == h && t.1 == w), "all montage tiles must share dimensions");
    let max_diff = tiles
        .iter()
        .flat_map(|(_, _, a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    let comment = format!(
        "columns: truth, prediction, |difference|; middle axial slice per row\n\
         gray = round((v + 1) / 2 * 255) for v in [-1, 1]\n\
         difference: black-red-yellow-white ramp over [0, {max_diff:.6}]"
    );
    let mut img = Pixmap::new(3 * w, h * tiles.len(), comment);
    for (row, (_, _, a, b)) in tiles.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let (ta, tb) = (a[y * w + x], b[y * w + x]);
                let (ga, gb) = (gray_level(ta), gray_level(tb));
                let heat = if max_diff > 0.0 { hot((ta - tb).abs() / max_diff) } else { [0, 0, 0] };
                let py = row * h + y;
                img.set(x, py, [ga; 3]);
                img.set(w + x, py, [gb; 3]);
                img.set(2 * w + x, py, heat);
            }
        }
    }
    Ok(img)
}

/// Middle slices of several volumes side by side in gray.
pub fn slice_strip(volumes: &[Tensor]) -> Result<Pixmap> {
    ensure!(!volumes.is_empty(), "strip needs at least one volume");
    let tiles = volumes.iter().map(middle_slice).collect::<Result<Vec<_>>>()?;
    let (h, w) = (tiles[0].0, tiles[0].1);
    ensure!(tiles.iter().all(|t| t.0 == h && t.1 == w), "all strip tiles must share dimensions");
    let mut img =
        Pixmap::new(w * tiles.len(), h, "middle axial slices; gray = round((v + 1) / 2 * 255) for v in [-1, 1]");
    for (i, (_, _, v)) in tiles.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                img.set(i * w + x, y, [gray_level(v[y * w + x]); 3]);
            }
        }
    }
    Ok(img)
}

pub const PLOT_WIDTH: usize = 320;
pub const PLOT_HEIGHT: usize = 240;
const PLOT_MARGIN: usize = 24;

/// Where a line chart puts its data.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotLayout {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub vertices: Vec<(usize, usize)>,
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let span = hi - lo;
    let pad = if span > 0.0 { 0.05 * span } else { 0.05 * lo.abs().max(1.0) };
    (lo - pad, hi + pad)
}

/// Axis ranges cover the data with a 5% margin on each side.
pub fn plot_layout(points: &[(f64, f64)]) -> Result<PlotLayout> {
    ensure!(points.len() >= 2, "a sweep plot needs at least two points, got {}", points.len());
    ensure!(points.iter().all(|(x, y)| x.is_finite() && y.is_finite()), "sweep points must be finite");
    let fold = |f: fn(&(f64, f64)) -> f64| {
        points.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
    };
    let (xl, xh) = fold(|p| p.0);
    let (yl, yh) = fold(|p| p.1);
    let x_range = padded(xl, xh);
    let y_range = padded(yl, yh);
    let (pw, ph) = ((PLOT_WIDTH - 2 * PLOT_MARGIN) as f64, (PLOT_HEIGHT - 2 * PLOT_MARGIN) as f64);
    let vertices = points
        .iter()
        .map(|&(x, y)| {
            let px = PLOT_MARGIN as f64 + (x - x_range.0) / (x_range.1 - x_range.0) * pw;
            let py = (PLOT_HEIGHT - PLOT_MARGIN) as f64 - (y - y_range.0) / (y_range.1 - y_range.0) * ph;
            (px.round() as usize, py.round() as usize)
        })
        .collect();
    Ok(PlotLayout { x_range, y_range, vertices })
}

fn line(img: &mut Pixmap, (x0, y0): (usize, usize), (x1, y1): (usize, usize), c: [u8; 3]) {
    let steps = x0.abs_diff(x1).max(y0.abs_diff(y1)).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = x0 as f64 + t * (x1 as f64 - x0 as f64);
        let y = y0 as f64 + t * (y1 as f64 - y0 as f64);
        img.set(x.round() as usize, y.round() as usize, c);
    }
}

/// White line chart with black axes, a blue polyline and red markers.
pub fn sweep_plot(points: &[(f64, f64)], title: &str) -> Result<Pixmap> {
    let layout = plot_layout(points)?;
    let comment = format!(
        "{title}\nx range [{:.6}, {:.6}], y range [{:.6}, {:.6}]",
        layout.x_range.0, layout.x_range.1, layout.y_range.0, layout.y_range.1
    );
    let mut img = Pixmap::filled(PLOT_WIDTH, PLOT_HEIGHT, comment, [255; 3]);
    let (l, b) = (PLOT_MARGIN, PLOT_HEIGHT - PLOT_MARGIN);
    line(&mut img, (l, b), (PLOT_WIDTH - PLOT_MARGIN, b), [0; 3]);
    line(&mut img, (l, b), (l, PLOT_MARGIN), [0; 3]);
    for pair in layout.vertices.windows(2) {
        line(&mut img, pair[0], pair[1], [30, 80, 200]);
    }
    for &(x, y) in &layout.vertices {
        for dy in 0..5 {
            for dx in 0..5 {
                img.set((x + dx).saturating_sub(2), (y + dy).saturating_sub(2), [200, 30, 30]);
            }
        }
    }
    Ok(img)
}
