use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::metrics::{KlDirection, SsimConfig};
use crate::nets::{SvaeConfig, SynthConfig, Vae3dConfig};
use crate::phantom::AugmentSpec;

use super::AdaptReference;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub master_seed: u64,
    pub epochs_syn: usize,
    pub epochs_svae: usize,
    pub epochs_vae3d: usize,
    pub epochs_uda: usize,
    pub epochs_finetune: usize,
    pub kl_weight: f64,
    pub ada_weight: f64,
    pub lr_syn: f64,
    pub lr_svae: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Source-supervised steps before each adaptation step.
    pub source_steps_per_adapt: usize,
    /// Share of a volume's slices in each s-VAE batch.
    pub svae_batch_fraction: f64,
    pub augment: AugmentSpec,
    pub kl_direction: KlDirection,
    pub adapt_reference: AdaptReference,
    pub synth: SynthConfig,
    pub svae: SvaeConfig,
    pub vae3d: Vae3dConfig,
    pub ssim: SsimConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            master_seed: 0,
            epochs_syn: 60,
            epochs_svae: 300,
            epochs_vae3d: 300,
            epochs_uda: 5,
            epochs_finetune: 20,
            kl_weight: 0.001,
            ada_weight: 0.03,
            lr_syn: 2e-4,
            lr_svae: 1e-3,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            source_steps_per_adapt: 1,
            svae_batch_fraction: 1.0,
            augment: AugmentSpec::default(),
            kl_direction: KlDirection::default(),
            adapt_reference: AdaptReference::default(),
            synth: SynthConfig::default(),
            svae: SvaeConfig::default(),
            vae3d: Vae3dConfig::default(),
            ssim: SsimConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            [self.epochs_syn, self.epochs_svae, self.epochs_vae3d, self.epochs_uda, self.epochs_finetune]
                .iter()
                .all(|&e| e >= 1),
            "every epoch count must be at least 1"
        );
        ensure!(
            [self.kl_weight, self.ada_weight, self.lr_syn, self.lr_svae].iter().all(|&w| w >= 0.0 && w.is_finite()),
            "weights and learning rates must be finite and non-negative"
        );
        ensure!(self.source_steps_per_adapt >= 1, "source_steps_per_adapt must be at least 1");
        ensure!(
            self.svae_batch_fraction > 0.0 && self.svae_batch_fraction <= 1.0,
            "svae_batch_fraction must lie in (0, 1]"
        );
        let (lo, hi) = self.augment.intensity_range;
        ensure!(0.0 < lo && lo <= hi, "augment intensity range must satisfy 0 < lo <= hi");
        Ok(())
    }
}
