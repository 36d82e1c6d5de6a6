use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::phantom::{to_network_range, DomainSpec, Modality, NUM_CLASSES};
use crate::tensor::Tensor;

/// Labels each voxel of a network-range output volume with the class whose
/// noise-free rendered intensity in `domain` is nearest. Ties go to the
/// lower class.
pub fn threshold_segment(volume: &Tensor, domain: &DomainSpec) -> Vec<u8> {
    let levels: Vec<f64> =
        (0..NUM_CLASSES as u8).map(|c| to_network_range(domain.clean_intensity(Modality::Out, c))).collect();
    volume
        .data()
        .iter()
        .map(|&v| {
            let mut best = 0u8;
            for (c, l) in levels.iter().enumerate() {
                if (v - l).abs() < (v - levels[best as usize]).abs() {
                    best = c as u8;
                }
            }
            best
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiceScores {
    pub classes: Vec<u8>,
    pub per_class: Vec<f64>,
    pub mean: f64,
}

/// `2|A and B| / (|A| + |B|)` per class; a class absent from both is 1.
pub fn dice(pred: &[u8], truth: &[u8], classes: &[u8]) -> Result<DiceScores> {
    ensure!(pred.len() == truth.len(), "label grids differ in size: {} vs {}", pred.len(), truth.len());
    ensure!(!classes.is_empty(), "dice needs at least one class");
    let per_class: Vec<f64> = classes
        .iter()
        .map(|&c| {
            let (mut a, mut b, mut both) = (0u64, 0u64, 0u64);
            for (&p, &t) in pred.iter().zip(truth) {
                a += u64::from(p == c);
                b += u64::from(t == c);
                both += u64::from(p == c && t == c);
            }
            if a + b == 0 {
                1.0
            } else {
                2.0 * both as f64 / (a + b) as f64
            }
        })
        .collect();
    let mean = per_class.iter().sum::<f64>() / per_class.len() as f64;
    Ok(DiceScores { classes: classes.to_vec(), per_class, mean })
}
