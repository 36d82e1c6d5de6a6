//! Conv encoder/decoder shared by the slice VAE (2D) and the volume VAE (3D).

use super::layers::{Conv, ConvKind, Dense, ResBlock};
use super::GaussianVars;
use crate::error::{ensure, Result};
use crate::rng::Rng;
use crate::tensor::{Bound, ParamSet, Tape, Var};

#[derive(Clone, Copy, Debug)]
pub(crate) struct CoreShape {
    pub rank: usize,
    pub extent: usize,
    pub latent_dim: usize,
    pub base_channels: usize,
    pub stages: usize,
    pub res_blocks: usize,
    pub slope: f64,
}

impl CoreShape {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.latent_dim > 0 && self.base_channels > 0 && self.stages > 0, "vae sizes must be positive");
        let k = 1usize << self.stages;
        ensure!(
            self.extent % k == 0 && self.extent >= k,
            "vae extent {} must be a positive multiple of {k}",
            self.extent
        );
        Ok(())
    }

    fn width(&self) -> usize {
        self.base_channels << (self.stages - 1)
    }

    fn bottleneck(&self) -> usize {
        self.extent >> self.stages
    }

    fn features(&self) -> usize {
        self.width() * self.bottleneck().pow(self.rank as u32)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct VaeCore {
    pub shape: CoreShape,
    enc: Vec<Conv>,
    enc_res: Vec<ResBlock>,
    fc_mu: Dense,
    fc_logvar: Dense,
    dec_fc: Dense,
    dec_res: Vec<ResBlock>,
    dec_up: Vec<Conv>,
    dec_out: Conv,
}

impl VaeCore {
    pub fn new(shape: CoreShape, params: &mut ParamSet, rng: &mut Rng) -> Result<Self> {
        shape.validate()?;
        let (conv, convt) =
            if shape.rank == 2 { (ConvKind::Conv2d, ConvKind::ConvT2d) } else { (ConvKind::Conv3d, ConvKind::ConvT3d) };
        let b = shape.base_channels;
        let enc = (0..shape.stages)
            .map(|i| {
                let ci = if i == 0 { 1 } else { b << (i - 1) };
                Conv::new(params, &format!("enc.conv{i}"), conv, ci, b << i, 3, 2, 1, rng)
            })
            .collect();
        let w = shape.width();
        let enc_res = (0..shape.res_blocks)
            .map(|i| ResBlock::new(params, &format!("enc.res{i}"), conv, w, shape.slope, rng))
            .collect();
        let f = shape.features();
        let fc_mu = Dense::new(params, "enc.fc_mu", f, shape.latent_dim, rng);
        let fc_logvar = Dense::new(params, "enc.fc_logvar", f, shape.latent_dim, rng);
        let dec_fc = Dense::new(params, "dec.fc", shape.latent_dim, f, rng);
        let dec_res = (0..shape.res_blocks)
            .map(|i| ResBlock::new(params, &format!("dec.res{i}"), conv, w, shape.slope, rng))
            .collect();
        let dec_up = (0..shape.stages)
            .rev()
            .map(|i| {
                let co = b << i.saturating_sub(1);
                Conv::new(params, &format!("dec.up{i}"), convt, b << i, co, 2, 2, 0, rng)
            })
            .collect();
        let dec_out = Conv::new(params, "dec.out", conv, b, 1, 3, 1, 1, rng);
        Ok(VaeCore { shape, enc, enc_res, fc_mu, fc_logvar, dec_fc, dec_res, dec_up, dec_out })
    }

    pub fn check_input(&self, dims: &[usize]) -> Result<()> {
        let s = &self.shape;
        ensure!(
            dims.len() == s.rank + 2 && dims[1] == 1 && dims[2..].iter().all(|&e| e == s.extent),
            "vae input must be [N,1,{}] with extent {}, got {dims:?}",
            vec!["E"; s.rank].join(","),
            s.extent
        );
        Ok(())
    }

    pub fn encode(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<GaussianVars> {
        let dims = tape.shape(x).to_vec();
        self.check_input(&dims)?;
        let mut h = x;
        for c in &self.enc {
            let y = c.apply(tape, p, h)?;
            h = tape.leaky_relu(y, self.shape.slope);
        }
        for r in &self.enc_res {
            h = r.apply(tape, p, h)?;
        }
        let flat = tape.reshape(h, &[dims[0], self.shape.features()])?;
        let mean = self.fc_mu.apply(tape, p, flat)?;
        let log_var = self.fc_logvar.apply(tape, p, flat)?;
        Ok(GaussianVars { mean, log_var })
    }

    pub fn decode(&self, tape: &mut Tape, p: &Bound, z: Var) -> Result<Var> {
        let zs = tape.shape(z).to_vec();
        let s = self.shape;
        ensure!(
            zs.len() == 2 && zs[1] == s.latent_dim,
            "latent must be [N,{}], got {zs:?}",
            s.latent_dim
        );
        let h = self.dec_fc.apply(tape, p, z)?;
        let h = tape.leaky_relu(h, s.slope);
        let mut shape = vec![zs[0], s.width()];
        shape.extend(std::iter::repeat_n(s.bottleneck(), s.rank));
        let mut h = tape.reshape(h, &shape)?;
        for r in &self.dec_res {
            h = r.apply(tape, p, h)?;
        }
        for c in &self.dec_up {
            let y = c.apply(tape, p, h)?;
            h = tape.leaky_relu(y, s.slope);
        }
        let o = self.dec_out.apply(tape, p, h)?;
        Ok(tape.tanh(o))
    }
}
