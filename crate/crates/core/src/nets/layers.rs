use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{init_params, Bound, Init, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ConvKind {
    Conv2d,
    Conv3d,
    ConvT2d,
    ConvT3d,
}

impl ConvKind {
    fn spatial_rank(self) -> usize {
        match self {
            ConvKind::Conv2d | ConvKind::ConvT2d => 2,
            ConvKind::Conv3d | ConvKind::ConvT3d => 3,
        }
    }

    fn transposed(self) -> bool {
        matches!(self, ConvKind::ConvT2d | ConvKind::ConvT3d)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub w: usize,
    pub b: usize,
    kind: ConvKind,
    stride: usize,
    pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        kind: ConvKind,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Self {
        let mut shape = if kind.transposed() { vec![c_in, c_out] } else { vec![c_out, c_in] };
        shape.extend(std::iter::repeat_n(k, kind.spatial_rank()));
        let w = params.add(format!("{name}.weight"), init_params(Init::KaimingUniform, &shape, rng));
        let b = params.add(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        Conv { w, b, kind, stride, pad }
    }

    pub fn apply(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let (w, b) = (p.var(self.w), p.var(self.b));
        match self.kind {
            ConvKind::Conv2d => tape.conv2d(x, w, b, self.stride, self.pad),
            ConvKind::Conv3d => tape.conv3d(x, w, b, self.stride, self.pad),
            ConvKind::ConvT2d => tape.conv_transpose2d(x, w, b, self.stride, self.pad),
            ConvKind::ConvT3d => tape.conv_transpose3d(x, w, b, self.stride, self.pad),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Dense {
    pub w: usize,
    pub b: usize,
}

impl Dense {
    pub fn new(params: &mut ParamSet, name: &str, n_in: usize, n_out: usize, rng: &mut Rng) -> Self {
        let w = params.add(format!("{name}.weight"), init_params(Init::KaimingUniform, &[n_out, n_in], rng));
        let b = params.add(format!("{name}.bias"), Tensor::zeros(&[n_out]));
        Dense { w, b }
    }

    pub fn apply(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.linear(x, p.var(self.w), p.var(self.b))
    }
}

/// `act(x + conv2(act(conv1(x))))` with 3-wide same-padding kernels.
#[derive(Clone, Debug)]
pub(crate) struct ResBlock {
    c1: Conv,
    c2: Conv,
    slope: f64,
}

impl ResBlock {
    pub fn new(params: &mut ParamSet, name: &str, kind: ConvKind, channels: usize, slope: f64, rng: &mut Rng) -> Self {
        let c1 = Conv::new(params, &format!("{name}.conv1"), kind, channels, channels, 3, 1, 1, rng);
        let c2 = Conv::new(params, &format!("{name}.conv2"), kind, channels, channels, 3, 1, 1, rng);
        ResBlock { c1, c2, slope }
    }

    pub fn apply(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.c1.apply(tape, p, x)?;
        let h = tape.leaky_relu(h, self.slope);
        let h = self.c2.apply(tape, p, h)?;
        let s = tape.add(x, h)?;
        Ok(tape.leaky_relu(s, self.slope))
    }
}
