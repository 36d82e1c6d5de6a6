use serde::{Deserialize, Serialize};

use super::layers::{Conv, ConvKind, ResBlock};
use crate::error::{ensure, Result};
use crate::rng::seeded;
use crate::tensor::{Bound, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub down_stages: usize,
    pub res_blocks: usize,
    pub skip_connections: bool,
    pub slope: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { in_channels: 2, base_channels: 8, down_stages: 2, res_blocks: 2, skip_connections: true, slope: 0.2 }
    }
}

/// 3D encoder-decoder mapping the input modalities to the output modality.
#[derive(Clone, Debug)]
pub struct SynthModel {
    pub config: SynthConfig,
    pub seed: u64,
    pub params: ParamSet,
    stem: Conv,
    down: Vec<Conv>,
    res: Vec<ResBlock>,
    up: Vec<Conv>,
    out: Conv,
}

impl SynthModel {
    pub fn new(config: SynthConfig, seed: u64) -> Result<Self> {
        ensure!(config.in_channels > 0 && config.base_channels > 0, "synth channels must be positive");
        let mut rng = seeded(seed);
        let mut params = ParamSet::new();
        let b = config.base_channels;
        let stem = Conv::new(&mut params, "stem", ConvKind::Conv3d, config.in_channels, b, 3, 1, 1, &mut rng);
        let down = (0..config.down_stages)
            .map(|i| {
                let (ci, co) = (b << i, b << (i + 1));
                Conv::new(&mut params, &format!("down{i}"), ConvKind::Conv3d, ci, co, 3, 2, 1, &mut rng)
            })
            .collect();
        let width = b << config.down_stages;
        let res = (0..config.res_blocks)
            .map(|i| ResBlock::new(&mut params, &format!("res{i}"), ConvKind::Conv3d, width, config.slope, &mut rng))
            .collect();
        let up = (0..config.down_stages)
            .rev()
            .map(|i| {
                let (ci, co) = (b << (i + 1), b << i);
                Conv::new(&mut params, &format!("up{i}"), ConvKind::ConvT3d, ci, co, 2, 2, 0, &mut rng)
            })
            .collect();
        let out = Conv::new(&mut params, "out", ConvKind::Conv3d, b, 1, 3, 1, 1, &mut rng);
        Ok(SynthModel { config, seed, params, stem, down, res, up, out })
    }

    /// Spatial extents must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << self.config.down_stages
    }

    /// Sets the output layer to zero so the network emits `tanh(0) = 0`.
    pub fn zero_output_layer(&mut self) {
        for idx in [self.out.w, self.out.b] {
            self.params.value_mut(idx).data_mut().fill(0.0);
        }
    }

    pub fn forward_on(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        ensure!(
            shape.len() == 5 && shape[1] == self.config.in_channels,
            "synth input must be [B,{},D,H,W], got {shape:?}",
            self.config.in_channels
        );
        let k = self.divisor();
        ensure!(
            shape[2..].iter().all(|&e| e % k == 0),
            "synth spatial extents {:?} must be divisible by {k}",
            &shape[2..]
        );
        let slope = self.config.slope;
        let h = self.stem.apply(tape, p, x)?;
        let mut h = tape.leaky_relu(h, slope);
        let mut skips = Vec::with_capacity(self.down.len());
        for conv in &self.down {
            skips.push(h);
            let d = conv.apply(tape, p, h)?;
            h = tape.leaky_relu(d, slope);
        }
        for block in &self.res {
            h = block.apply(tape, p, h)?;
        }
        for conv in &self.up {
            let u = conv.apply(tape, p, h)?;
            h = tape.leaky_relu(u, slope);
            let skip = skips.pop().expect("one skip per stage");
            if self.config.skip_connections {
                h = tape.add(h, skip)?;
            }
        }
        let o = self.out.apply(tape, p, h)?;
        Ok(tape.tanh(o))
    }

    /// Inference without gradients.
    pub fn forward(&self, inputs: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(inputs.clone());
        let y = self.forward_on(&mut tape, &p, x)?;
        Ok(tape.value(y).clone())
    }
}
