//! Direct-loop convolution kernels over `[B, C, D, H, W]` layouts.
//!
//! 2D convolutions run through the same code with `D = 1` and a depth-1
//! kernel. Patches are unfolded into columns and contracted with a GEMM; the
//! transposed convolution reuses the kernels with the roles of input and
//! output swapped.

use crate::error::{ensure, Result};

/// Per-axis stride and zero padding, ordered (depth, height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    pub fn new3d(stride: usize, pad: usize) -> Self {
        ConvGeom { stride: [stride; 3], pad: [pad; 3] }
    }

    pub fn new2d(stride: usize, pad: usize) -> Self {
        ConvGeom { stride: [1, stride, stride], pad: [0, pad, pad] }
    }
}

/// Fully resolved extents of one convolution, in "forward conv" orientation:
/// `inp` is the conv input, `out` the conv output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub inp: [usize; 3],
    pub kernel: [usize; 3],
    pub out: [usize; 3],
    pub geom: ConvGeom,
}

impl ConvDims {
    /// Dimensions of a forward convolution.
    pub fn forward(
        batch: usize,
        c_in: usize,
        c_out: usize,
        inp: [usize; 3],
        kernel: [usize; 3],
        geom: ConvGeom,
    ) -> Result<Self> {
        let mut out = [0; 3];
        for a in 0..3 {
            ensure!(geom.stride[a] >= 1, "stride must be positive");
            let padded = inp[a] + 2 * geom.pad[a];
            ensure!(
                kernel[a] <= padded,
                "kernel extent {} exceeds padded input extent {} on axis {a}",
                kernel[a],
                padded
            );
            out[a] = (padded - kernel[a]) / geom.stride[a] + 1;
        }
        Ok(ConvDims { batch, c_in, c_out, inp, kernel, out, geom })
    }

    /// Dimensions of the forward convolution whose adjoint maps an input of
    /// extent `t_in` to `(t_in - 1) * stride - 2 * pad + k`.
    pub fn transposed(
        batch: usize,
        c_in_t: usize,
        c_out_t: usize,
        t_in: [usize; 3],
        kernel: [usize; 3],
        geom: ConvGeom,
    ) -> Result<Self> {
        let mut inp = [0; 3];
        for a in 0..3 {
            ensure!(geom.stride[a] >= 1, "stride must be positive");
            let full = (t_in[a] - 1) * geom.stride[a] + kernel[a];
            ensure!(
                full > 2 * geom.pad[a],
                "transposed conv output extent non-positive on axis {a}"
            );
            inp[a] = full - 2 * geom.pad[a];
        }
        let dims = ConvDims::forward(batch, c_out_t, c_in_t, inp, kernel, geom)?;
        ensure!(dims.out == t_in, "transposed conv extents are inconsistent");
        Ok(dims)
    }

    fn in_size(&self) -> usize {
        self.inp.iter().product()
    }

    fn out_size(&self) -> usize {
        self.out.iter().product()
    }

    fn k_size(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn input_len(&self) -> usize {
        self.batch * self.c_in * self.in_size()
    }

    pub fn output_len(&self) -> usize {
        self.batch * self.c_out * self.out_size()
    }

    pub fn kernel_len(&self) -> usize {
        self.c_out * self.c_in * self.k_size()
    }
}

/// Output indices `o` along one axis with `o * s + k - p` inside `[0, n)`.
#[inline]
fn valid_range(out_n: usize, in_n: usize, k: usize, s: usize, p: usize) -> (usize, usize) {
    let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
    if in_n + p <= k {
        return (0, 0);
    }
    let hi = ((in_n - 1 + p - k) / s + 1).min(out_n);
    (lo.min(hi), hi)
}

/// Visits every (output row, input row, weight) triple of one channel pair.
/// The callback receives the output-row offset, input-row offset, the first
/// and one-past-last valid output column, and the flat kernel index.
#[inline(always)]
fn for_each_row(d: &ConvDims, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    let [od_n, oh_n, ow_n] = d.out;
    let [id_n, ih_n, iw_n] = d.inp;
    let [kd_n, kh_n, kw_n] = d.kernel;
    let [sd, sh, sw] = d.geom.stride;
    let [pd, ph, pw] = d.geom.pad;
    for kd in 0..kd_n {
        let (od0, od1) = valid_range(od_n, id_n, kd, sd, pd);
        for kh in 0..kh_n {
            let (oh0, oh1) = valid_range(oh_n, ih_n, kh, sh, ph);
            for kw in 0..kw_n {
                let (ow0, ow1) = valid_range(ow_n, iw_n, kw, sw, pw);
                if ow0 >= ow1 {
                    continue;
                }
                let kidx = (kd * kh_n + kh) * kw_n + kw;
                for od in od0..od1 {
                    let id = od * sd + kd - pd;
                    for oh in oh0..oh1 {
                        let ih = oh * sh + kh - ph;
                        let orow = (od * oh_n + oh) * ow_n;
                        let irow = (id * ih_n + ih) * iw_n;
                        f(orow, irow, ow0, ow1, kidx);
                    }
                }
            }
        }
    }
}

/// `c = a * b + beta * c` over row-major buffers; `a` is `[m, k]` (or
/// `[k, m]` when `a_t`), `b` is `[k, n]` (or `[n, k]` when `b_t`).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too short");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_t { (1, k) } else { (n, 1) };
    // SAFETY: the assertion above keeps every strided access in bounds, and `c`
    // is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds one batch item into `[c_in * k, out]` patch columns, writing
/// every entry once (zero where the patch reads padding).
fn im2col(x_b: &[f64], d: &ConvDims, cols: &mut [f64]) {
    let (isz, osz, ksz) = (d.in_size(), d.out_size(), d.k_size());
    let [od_n, oh_n, ow_n] = d.out;
    let [id_n, ih_n, iw_n] = d.inp;
    let [kd_n, kh_n, kw_n] = d.kernel;
    let [sd, sh, sw] = d.geom.stride;
    let [pd, ph, pw] = d.geom.pad;
    for ci in 0..d.c_in {
        let x_c = &x_b[ci * isz..][..isz];
        for kd in 0..kd_n {
            let (od0, od1) = valid_range(od_n, id_n, kd, sd, pd);
            for kh in 0..kh_n {
                let (oh0, oh1) = valid_range(oh_n, ih_n, kh, sh, ph);
                for kw in 0..kw_n {
                    let (ow0, ow1) = valid_range(ow_n, iw_n, kw, sw, pw);
                    let kidx = (kd * kh_n + kh) * kw_n + kw;
                    let block = &mut cols[(ci * ksz + kidx) * osz..][..osz];
                    for (od, plane) in block.chunks_exact_mut(oh_n * ow_n).enumerate() {
                        if !(od0..od1).contains(&od) || ow0 >= ow1 {
                            plane.fill(0.0);
                            continue;
                        }
                        let id = od * sd + kd - pd;
                        for (oh, row) in plane.chunks_exact_mut(ow_n).enumerate() {
                            if !(oh0..oh1).contains(&oh) {
                                row.fill(0.0);
                                continue;
                            }
                            let ih = oh * sh + kh - ph;
                            let start = (id * ih_n + ih) * iw_n + ow0 * sw + kw - pw;
                            row[..ow0].fill(0.0);
                            row[ow1..].fill(0.0);
                            let dst = &mut row[ow0..ow1];
                            if sw == 1 {
                                dst.copy_from_slice(&x_c[start..start + dst.len()]);
                            } else {
                                for (j, v) in dst.iter_mut().enumerate() {
                                    *v = x_c[start + j * sw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds patch columns back onto one batch item.
fn col2im(cols: &[f64], d: &ConvDims, x_b: &mut [f64]) {
    let (isz, osz, ksz) = (d.in_size(), d.out_size(), d.k_size());
    let sw = d.geom.stride[2];
    let (kw_n, pw) = (d.kernel[2], d.geom.pad[2]);
    for ci in 0..d.c_in {
        let x_c = &mut x_b[ci * isz..][..isz];
        let cols_c = &cols[ci * ksz * osz..][..ksz * osz];
        for_each_row(d, |orow, irow, ow0, ow1, kidx| {
            let kw = kidx % kw_n;
            let src = &cols_c[kidx * osz + orow + ow0..kidx * osz + orow + ow1];
            let start = irow + ow0 * sw + kw - pw;
            if sw == 1 {
                for (v, s) in x_c[start..start + src.len()].iter_mut().zip(src) {
                    *v += s;
                }
            } else {
                for (j, s) in src.iter().enumerate() {
                    x_c[start + j * sw] += s;
                }
            }
        });
    }
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Runs `f` on a reusable column buffer of `len` values (contents unspecified).
fn with_cols<R>(len: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    SCRATCH.with(|cell| {
        let mut buf = cell.take();
        if buf.len() < len {
            buf.resize(len, 0.0);
        }
        let r = f(&mut buf[..len]);
        cell.replace(buf);
        r
    })
}

pub(crate) fn conv_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, d: &ConvDims) -> Vec<f64> {
    let (isz, osz) = (d.in_size(), d.out_size());
    let patch = d.c_in * d.k_size();
    let mut out = vec![0.0; d.output_len()];
    with_cols(patch * osz, |cols| {
        for b in 0..d.batch {
            im2col(&x[b * d.c_in * isz..][..d.c_in * isz], d, cols);
            let out_b = &mut out[b * d.c_out * osz..][..d.c_out * osz];
            gemm(d.c_out, patch, osz, w, false, cols, false, 0.0, out_b);
            if let Some(bias) = bias {
                for (chunk, &bv) in out_b.chunks_mut(osz).zip(bias) {
                    chunk.iter_mut().for_each(|v| *v += bv);
                }
            }
        }
    });
    out
}

pub(crate) fn conv_backward_input(gout: &[f64], w: &[f64], d: &ConvDims) -> Vec<f64> {
    let (isz, osz) = (d.in_size(), d.out_size());
    let patch = d.c_in * d.k_size();
    let mut gin = vec![0.0; d.input_len()];
    with_cols(patch * osz, |cols| {
        for b in 0..d.batch {
            let g_b = &gout[b * d.c_out * osz..][..d.c_out * osz];
            gemm(patch, d.c_out, osz, w, true, g_b, false, 0.0, cols);
            col2im(cols, d, &mut gin[b * d.c_in * isz..][..d.c_in * isz]);
        }
    });
    gin
}

pub(crate) fn conv_backward_kernel(x: &[f64], gout: &[f64], d: &ConvDims) -> Vec<f64> {
    let (isz, osz) = (d.in_size(), d.out_size());
    let patch = d.c_in * d.k_size();
    let mut gw = vec![0.0; d.kernel_len()];
    with_cols(patch * osz, |cols| {
        for b in 0..d.batch {
            im2col(&x[b * d.c_in * isz..][..d.c_in * isz], d, cols);
            let g_b = &gout[b * d.c_out * osz..][..d.c_out * osz];
            gemm(d.c_out, osz, patch, g_b, false, cols, true, 1.0, &mut gw);
        }
    });
    gw
}

/// Per-output-channel sum of a `[B, C, ...]` gradient.
pub(crate) fn bias_grad(gout: &[f64], batch: usize, channels: usize) -> Vec<f64> {
    let per = gout.len() / (batch * channels);
    let mut gb = vec![0.0; channels];
    for b in 0..batch {
        for (c, slot) in gb.iter_mut().enumerate() {
            *slot += gout[(b * channels + c) * per..][..per].iter().sum::<f64>();
        }
    }
    gb
}

/// Adds `bias[c]` to every element of channel `c`.
pub(crate) fn add_channel_bias(out: &mut [f64], bias: &[f64], batch: usize) {
    let channels = bias.len();
    let per = out.len() / (batch * channels);
    for b in 0..batch {
        for (c, &bv) in bias.iter().enumerate() {
            for v in &mut out[(b * channels + c) * per..][..per] {
                *v += bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_brute_force() {
        for in_n in 1..7 {
            for k in 0..4 {
                for s in 1..4 {
                    for p in 0..3 {
                        let ksize = k + 1;
                        if ksize > in_n + 2 * p {
                            continue;
                        }
                        let out_n = (in_n + 2 * p - ksize) / s + 1;
                        let expect: Vec<usize> = (0..out_n)
                            .filter(|&o| {
                                let i = (o * s + k) as isize - p as isize;
                                i >= 0 && (i as usize) < in_n
                            })
                            .collect();
                        let (lo, hi) = valid_range(out_n, in_n, k, s, p);
                        let got: Vec<usize> = (lo..hi).collect();
                        assert_eq!(got, expect, "in {in_n} k {k} s {s} p {p}");
                    }
                }
            }
        }
    }
}
