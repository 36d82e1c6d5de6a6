use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Tensor;

/// Parameter initialisation schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform on `±sqrt(6 / fan_in)`, with `fan_in = product(shape[1..])`.
    KaimingUniform,
    /// Gaussian with zero mean and the given standard deviation.
    Normal(f64),
    Zeros,
}

pub fn fan_in(shape: &[usize]) -> usize {
    if shape.len() <= 1 {
        shape.first().copied().unwrap_or(1)
    } else {
        shape[1..].iter().product()
    }
}

pub fn init_params<R: Rng + ?Sized>(scheme: Init, shape: &[usize], rng: &mut R) -> Tensor {
    assert!(!shape.is_empty(), "init_params needs a non-empty shape");
    let n: usize = shape.iter().product();
    let data = match scheme {
        Init::KaimingUniform => {
            let bound = (6.0 / fan_in(shape) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        }
        Init::Normal(sigma) => (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                if sigma == 0.0 { 0.0 } else { sigma * z }
            })
            .collect(),
        Init::Zeros => vec![0.0; n],
    };
    Tensor::from_parts(shape.to_vec(), data)
}
