use super::conv::{self, ConvDims, ConvGeom};
use super::{strides_of, Tensor};
use crate::error::{ensure, Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    PadCrop { x: Var, before: Vec<isize> },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Matmul(Var, Var),
    Linear { x: Var, w: Var, b: Var },
    Conv { x: Var, w: Var, b: Var, dims: ConvDims },
    ConvTranspose { x: Var, w: Var, b: Var, dims: ConvDims },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is always a
/// topological order of the graph. A tape is single-threaded; build a fresh
/// one per optimisation step.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf whose gradient is tracked (a trainable parameter).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient (data, frozen weights).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn binary(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.value(a).zip_map(self.value(b), f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        let rg = self.rg(&[a]);
        self.push(v, Op::AddScalar(a), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(v, op, rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(v, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(&[a]);
        self.push(v, Op::Mean(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Reshape(a), rg))
    }

    /// Collapses everything after the leading axis: `[N, ...] -> [N, rest]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        ensure!(!shape.is_empty(), "flatten of a scalar");
        let rest: usize = shape[1..].iter().product();
        self.reshape(a, &[shape[0], rest])
    }

    /// Zero-pads (positive amounts) or crops (negative amounts) each axis.
    /// `widths[i] = (before, after)`.
    pub fn pad_crop(&mut self, a: Var, widths: &[(isize, isize)]) -> Result<Var> {
        let in_shape = self.shape(a).to_vec();
        ensure!(
            widths.len() == in_shape.len(),
            "pad_crop needs {} axis widths, got {}",
            in_shape.len(),
            widths.len()
        );
        let mut out_shape = Vec::with_capacity(in_shape.len());
        for (&n, &(lo, hi)) in in_shape.iter().zip(widths) {
            let m = n as isize + lo + hi;
            ensure!(m > 0, "pad_crop leaves a non-positive extent");
            out_shape.push(m as usize);
        }
        let before: Vec<isize> = widths.iter().map(|w| w.0).collect();
        let data = shift_copy(self.value(a).data(), &in_shape, &out_shape, &before);
        let v = Tensor::from_parts(out_shape, data);
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::PadCrop { x: a, before }, rg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        ensure!(!xs.is_empty(), "concat of zero tensors");
        let first = self.shape(xs[0]).to_vec();
        ensure!(axis < first.len(), "concat axis {axis} out of range for {first:?}");
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            ensure!(
                s.len() == first.len()
                    && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b),
                "concat shape mismatch: {first:?} vs {s:?}"
            );
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let block = self.shape(x)[axis] * inner;
                data.extend_from_slice(&self.value(x).data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = self.rg(xs);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat { xs: xs.to_vec(), axis }, rg))
    }

    /// The sub-range `start..start + len` of one axis.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        ensure!(axis < shape.len(), "slice axis {axis} out of range for {shape:?}");
        ensure!(
            len > 0 && start + len <= shape[axis],
            "slice {start}..{} out of range for extent {}",
            start + len,
            shape[axis]
        );
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::Slice { x: a, axis, start }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        ensure!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul shape mismatch: {sa:?} x {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::Matmul(a, b), rg))
    }

    /// Dense layer `x · wᵀ + b` with `x: [M, K]`, `w: [N, K]`, `b: [N]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        ensure!(
            sx.len() == 2 && sw.len() == 2 && sx[1] == sw[1] && sb == [sw[0]],
            "linear shape mismatch: x {sx:?}, w {sw:?}, b {sb:?}"
        );
        let (m, k, n) = (sx[0], sx[1], sw[0]);
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let xr = &xd[i * k..(i + 1) * k];
            for j in 0..n {
                let wr = &wd[j * k..(j + 1) * k];
                out[i * n + j] = bd[j] + xr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::Linear { x, w, b }, rg))
    }

    fn conv_dims(&self, x: Var, w: Var, b: Var, geom: ConvGeom, rank: usize, transposed: bool) -> Result<ConvDims> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        ensure!(
            sx.len() == rank && sw.len() == rank,
            "conv expects rank-{rank} input and kernel, got {sx:?} and {sw:?}"
        );
        let spatial = |s: &[usize]| -> [usize; 3] {
            if rank == 4 {
                [1, s[2], s[3]]
            } else {
                [s[2], s[3], s[4]]
            }
        };
        if rank == 4 {
            ensure!(geom.stride[0] == 1 && geom.pad[0] == 0, "2D conv geometry has depth terms");
        }
        if transposed {
            ensure!(
                sx[1] == sw[0],
                "conv_transpose channel mismatch: input has {} channels, kernel expects {}",
                sx[1],
                sw[0]
            );
            ensure!(sb == [sw[1]], "conv_transpose bias shape {sb:?}, expected [{}]", sw[1]);
            ConvDims::transposed(sx[0], sw[0], sw[1], spatial(sx), spatial(sw), geom)
        } else {
            ensure!(
                sx[1] == sw[1],
                "conv channel mismatch: input has {} channels, kernel expects {}",
                sx[1],
                sw[1]
            );
            ensure!(sb == [sw[0]], "conv bias shape {sb:?}, expected [{}]", sw[0]);
            ConvDims::forward(sx[0], sw[1], sw[0], spatial(sx), spatial(sw), geom)
        }
    }

    fn conv_impl(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom, rank: usize) -> Result<Var> {
        let dims = self.conv_dims(x, w, b, geom, rank, false)?;
        let out = conv::conv_forward(
            self.value(x).data(),
            self.value(w).data(),
            Some(self.value(b).data()),
            &dims,
        );
        let shape = out_shape(rank, dims.batch, dims.c_out, dims.out);
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Conv { x, w, b, dims }, rg))
    }

    fn conv_t_impl(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom, rank: usize) -> Result<Var> {
        let dims = self.conv_dims(x, w, b, geom, rank, true)?;
        let mut out = conv::conv_backward_input(self.value(x).data(), self.value(w).data(), &dims);
        conv::add_channel_bias(&mut out, self.value(b).data(), dims.batch);
        let shape = out_shape(rank, dims.batch, dims.c_in, dims.inp);
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::ConvTranspose { x, w, b, dims }, rg))
    }

    /// `x: [B, Cin, H, W]`, `w: [Cout, Cin, kH, kW]`, `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        self.conv_impl(x, w, b, ConvGeom::new2d(stride, pad), 4)
    }

    /// `x: [B, Cin, D, H, W]`, `w: [Cout, Cin, kD, kH, kW]`, `b: [Cout]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        self.conv_impl(x, w, b, ConvGeom::new3d(stride, pad), 5)
    }

    /// Adjoint of [`Tape::conv2d`]; `w: [Cin, Cout, kH, kW]` is laid out as
    /// the kernel of the forward conv it transposes.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        self.conv_t_impl(x, w, b, ConvGeom::new2d(stride, pad), 4)
    }

    pub fn conv_transpose3d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        self.conv_t_impl(x, w, b, ConvGeom::new3d(stride, pad), 5)
    }

    /// Runs reverse-mode differentiation from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        ensure!(
            self.value(loss).numel() == 1,
            "backward needs a scalar loss, got shape {:?}",
            self.shape(loss)
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::from_parts(self.shape(loss).to_vec(), vec![1.0]));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut send = |v: Var, t: Tensor| {
            if self.nodes[v.0].requires_grad {
                accumulate(&mut grads[v.0], t);
            }
        };
        let want = |v: Var| self.nodes[v.0].requires_grad;
        let elementwise = |a: Var, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
            // f(input, out) is the local derivative
            let x = self.value(a);
            let data = g
                .data()
                .iter()
                .zip(x.data().iter().zip(out.data()))
                .map(|(gv, (&xv, &yv))| gv * f(xv, yv))
                .collect();
            Tensor::from_parts(x.shape().to_vec(), data)
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if want(*a) {
                    send(*a, g.zip_map(self.value(*b), |gv, bv| gv * bv)?);
                }
                if want(*b) {
                    send(*b, g.zip_map(self.value(*a), |gv, av| gv * av)?);
                }
            }
            Op::Scale(a, s) => send(*a, g.map(|v| v * s)),
            Op::AddScalar(a) => send(*a, g.clone()),
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                send(*a, elementwise(*a, &|x, _| if x > 0.0 { 1.0 } else { s }));
            }
            Op::Tanh(a) => send(*a, elementwise(*a, &|_, y| 1.0 - y * y)),
            Op::Sigmoid(a) => send(*a, elementwise(*a, &|_, y| y * (1.0 - y))),
            Op::Exp(a) => send(*a, elementwise(*a, &|_, y| y)),
            Op::Log(a) => send(*a, elementwise(*a, &|x, _| 1.0 / x)),
            Op::Square(a) => send(*a, elementwise(*a, &|x, _| 2.0 * x)),
            Op::Abs(a) => send(*a, elementwise(*a, &|x, _| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 })),
            Op::Sum(a) => {
                let gv = g.data()[0];
                send(*a, Tensor::full(self.shape(*a), gv));
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                let gv = g.data()[0] / n;
                send(*a, Tensor::full(self.shape(*a), gv));
            }
            Op::Reshape(a) => send(*a, Tensor::from_parts(self.shape(*a).to_vec(), g.data().to_vec())),
            Op::PadCrop { x, before } => {
                let in_shape = self.shape(*x).to_vec();
                let inverse: Vec<isize> = before.iter().map(|b| -b).collect();
                let data = shift_copy(g.data(), g.shape(), &in_shape, &inverse);
                send(*x, Tensor::from_parts(in_shape, data));
            }
            Op::Concat { xs, axis } => {
                let shape = g.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let mut offset = 0;
                for &x in xs {
                    let len = self.shape(x)[*axis];
                    if want(x) {
                        let mut data = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * shape[*axis] + offset) * inner;
                            data.extend_from_slice(&g.data()[base..base + len * inner]);
                        }
                        send(x, Tensor::from_parts(self.shape(x).to_vec(), data));
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let in_shape = self.shape(*x).to_vec();
                let outer: usize = in_shape[..*axis].iter().product();
                let inner: usize = in_shape[*axis + 1..].iter().product();
                let len = g.shape()[*axis];
                let mut data = vec![0.0; in_shape.iter().product()];
                for o in 0..outer {
                    let dst = (o * in_shape[*axis] + start) * inner;
                    let src = o * len * inner;
                    data[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                send(*x, Tensor::from_parts(in_shape, data));
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if want(*a) {
                    // g [m,n] · bᵀ [n,k]
                    let bt = transpose(self.value(*b).data(), k, n);
                    send(*a, Tensor::from_parts(vec![m, k], matmul_nn(g.data(), &bt, m, n, k)));
                }
                if want(*b) {
                    let at = transpose(self.value(*a).data(), m, k);
                    send(*b, Tensor::from_parts(vec![k, n], matmul_nn(&at, g.data(), k, m, n)));
                }
            }
            Op::Linear { x, w, b } => {
                let (m, k) = (self.shape(*x)[0], self.shape(*x)[1]);
                let n = self.shape(*w)[0];
                if want(*x) {
                    send(*x, Tensor::from_parts(vec![m, k], matmul_nn(g.data(), self.value(*w).data(), m, n, k)));
                }
                if want(*w) {
                    let gt = transpose(g.data(), m, n);
                    send(*w, Tensor::from_parts(vec![n, k], matmul_nn(&gt, self.value(*x).data(), n, m, k)));
                }
                if want(*b) {
                    let mut gb = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    send(*b, Tensor::from_parts(vec![n], gb));
                }
            }
            Op::Conv { x, w, b, dims } => {
                if want(*x) {
                    let gx = conv::conv_backward_input(g.data(), self.value(*w).data(), dims);
                    send(*x, Tensor::from_parts(self.shape(*x).to_vec(), gx));
                }
                if want(*w) {
                    let gw = conv::conv_backward_kernel(self.value(*x).data(), g.data(), dims);
                    send(*w, Tensor::from_parts(self.shape(*w).to_vec(), gw));
                }
                if want(*b) {
                    send(*b, Tensor::from_parts(vec![dims.c_out], conv::bias_grad(g.data(), dims.batch, dims.c_out)));
                }
            }
            Op::ConvTranspose { x, w, b, dims } => {
                // Forward was y = Cᵀx, so dx = C·dy and dK pairs dy (conv
                // input role) with x (conv output role).
                if want(*x) {
                    let gx = conv::conv_forward(g.data(), self.value(*w).data(), None, dims);
                    send(*x, Tensor::from_parts(self.shape(*x).to_vec(), gx));
                }
                if want(*w) {
                    let gw = conv::conv_backward_kernel(g.data(), self.value(*x).data(), dims);
                    send(*w, Tensor::from_parts(self.shape(*w).to_vec(), gw));
                }
                if want(*b) {
                    send(*b, Tensor::from_parts(vec![dims.c_in], conv::bias_grad(g.data(), dims.batch, dims.c_in)));
                }
            }
        }
        Ok(())
    }
}

fn out_shape(rank: usize, batch: usize, channels: usize, spatial: [usize; 3]) -> Vec<usize> {
    if rank == 4 {
        vec![batch, channels, spatial[1], spatial[2]]
    } else {
        vec![batch, channels, spatial[0], spatial[1], spatial[2]]
    }
}

fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Copies `src` (shape `from`) into a zero buffer of shape `to`, with
/// destination index = source index + `offset` per axis; out-of-range
/// elements are dropped.
fn shift_copy(src: &[f64], from: &[usize], to: &[usize], offset: &[isize]) -> Vec<f64> {
    let n_out: usize = to.iter().product();
    let mut out = vec![0.0; n_out];
    let to_strides = strides_of(to);
    let rank = from.len();
    let mut idx = vec![0usize; rank];
    for &v in src {
        let mut flat = 0usize;
        let mut inside = true;
        for a in 0..rank {
            let j = idx[a] as isize + offset[a];
            if j < 0 || j >= to[a] as isize {
                inside = false;
                break;
            }
            flat += j as usize * to_strides[a];
        }
        if inside {
            out[flat] = v;
        }
        for a in (0..rank).rev() {
            idx[a] += 1;
            if idx[a] < from[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv2d_all_ones() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let w = tape.constant(Tensor::ones(&[1, 1, 2, 2]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 2, 2]);
        assert!(tape.value(y).data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn conv3d_all_ones() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 2, 2, 2]));
        let w = tape.constant(Tensor::ones(&[1, 1, 2, 2, 2]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv3d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[8.0]);
    }

    #[test]
    fn identity_kernels_pass_input_through() {
        let data: Vec<f64> = (0..2 * 3 * 4 * 5).map(|i| (i as f64).cos()).collect();
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 2 * 3, 4, 5], &data));
        let w = tape.constant(Tensor::ones(&[1, 1, 1, 1, 1]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv3d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);

        let x2 = tape.constant(t(&[2, 1, 12, 5], &data));
        let w2 = tape.constant(Tensor::ones(&[1, 1, 1, 1]));
        let y2 = tape.conv2d(x2, w2, b, 1, 0).unwrap();
        assert_eq!(tape.value(y2).data(), &data[..]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1, 2, 4, 4]));
        let w = tape.constant(Tensor::ones(&[1, 3, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[1]));
        assert!(matches!(tape.conv2d(x, w, b, 1, 1), Err(Error::Contract(_))));
        let big = tape.constant(Tensor::ones(&[1, 2, 5, 5]));
        let wt = tape.constant(Tensor::ones(&[1, 2, 3, 3]));
        assert!(tape.conv2d(big, wt, b, 1, 0).is_ok());
        let small = tape.constant(Tensor::ones(&[1, 2, 2, 2]));
        assert!(tape.conv2d(small, wt, b, 1, 0).is_err());
    }

    #[test]
    fn conv_output_extents() {
        for (n, k, s, p) in [(32, 3, 2, 1), (16, 3, 1, 1), (7, 3, 2, 0), (9, 4, 3, 2), (5, 5, 1, 0)] {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::ones(&[1, 1, n, n]));
            let w = tape.constant(Tensor::ones(&[1, 1, k, k]));
            let b = tape.constant(Tensor::zeros(&[1]));
            let y = tape.conv2d(x, w, b, s, p).unwrap();
            let expect = (n + 2 * p - k) / s + 1;
            assert_eq!(tape.shape(y), &[1, 1, expect, expect]);
            let yt = tape.conv_transpose2d(y, w, b, s, p).unwrap();
            assert_eq!(tape.shape(yt)[2], (expect - 1) * s + k - 2 * p);
        }
    }

    #[test]
    fn conv_transpose_single_pixel() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 1, 1]));
        let w = tape.constant(Tensor::ones(&[1, 1, 2, 2]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv_transpose2d(x, w, b, 2, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 2, 2]);
        assert!(tape.value(y).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn elementwise_values() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let th = tape.tanh(z);
        assert_eq!(tape.value(th).data(), &[0.0]);
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).data(), &[0.5]);
        let m2 = tape.constant(Tensor::scalar(-2.0));
        let lr = tape.leaky_relu(m2, 0.2);
        assert!((tape.value(lr).data()[0] + 0.4).abs() < 1e-15);
        let r = tape.relu(m2);
        assert_eq!(tape.value(r).data(), &[0.0]);
        assert!(matches!(tape.log(z), Err(Error::Domain(_))));
        assert!(matches!(tape.log(m2), Err(Error::Domain(_))));
    }

    #[test]
    fn reductions_and_shape_ops() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[4], &[1.0, 2.0, 3.0, 4.0]));
        let m = tape.mean(x);
        assert_eq!(tape.value(m).data(), &[2.5]);
        let a = tape.constant(Tensor::ones(&[2, 3]));
        let c = tape.concat(&[a, a], 0).unwrap();
        assert_eq!(tape.shape(c), &[4, 3]);
        let c1 = tape.concat(&[a, a], 1).unwrap();
        assert_eq!(tape.shape(c1), &[2, 6]);
        assert!(tape.reshape(a, &[4, 2]).is_err());
        let f = tape.flatten(c).unwrap();
        assert_eq!(tape.shape(f), &[4, 3]);
    }

    #[test]
    fn pad_crop_round_trips() {
        let data: Vec<f64> = (0..24).map(|i| i as f64).collect();
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 3, 4], &data));
        let p = tape.pad_crop(x, &[(1, 0), (2, 1), (0, 3)]).unwrap();
        assert_eq!(tape.shape(p), &[3, 6, 7]);
        let back = tape.pad_crop(p, &[(-1, 0), (-2, -1), (0, -3)]).unwrap();
        assert_eq!(tape.value(back).data(), &data[..]);
    }

    #[test]
    fn slice_selects_sub_range() {
        let data: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3, 4], &data));
        let s = tape.slice(x, 1, 1, 2).unwrap();
        assert_eq!(tape.value(s).data(), &[1.0, 2.0, 5.0, 6.0, 9.0, 10.0]);
        assert!(tape.slice(x, 1, 3, 2).is_err());
    }

    #[test]
    fn matmul_values() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let ones = tape.constant(t(&[2, 1], &[1.0, 1.0]));
        let y = tape.matmul(a, ones).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 7.0]);
        let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let y2 = tape.matmul(eye, a).unwrap();
        assert_eq!(tape.value(y2), tape.value(a));
        assert!(tape.matmul(ones, ones).is_err());
    }

    #[test]
    fn backward_simple_rules() {
        let mut tape = Tape::new();
        let xv = t(&[3], &[0.5, -1.0, 2.0]);
        let yv = t(&[3], &[3.0, 4.0, -5.0]);
        let x = tape.param(xv.clone());
        let y = tape.constant(yv.clone());
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let xy = tape.mul(x, y).unwrap();
        let l = tape.sum(xy);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap(), &yv);
        assert!(g.get(y).is_none());

        let sq = tape.square(x);
        let l = tape.sum(sq);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap(), &xv.map(|v| 2.0 * v));

        assert!(tape.backward(x).is_err());
    }
}
