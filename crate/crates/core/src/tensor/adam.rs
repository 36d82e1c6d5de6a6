use super::ParamSet;
use crate::error::{ensure, Result};

/// Bias-corrected Adam over a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        ensure!(eps > 0.0, "adam epsilon must be positive");
        ensure!((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2), "adam betas must lie in [0, 1)");
        let zeros = || params.entries().iter().map(|e| vec![0.0; e.value.numel()]).collect();
        Ok(AdamState { lr, beta1, beta2, eps, step: 0, m: zeros(), v: zeros() })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients stored in `params`.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        ensure!(!params.is_frozen(), "cannot step a frozen parameter set");
        ensure!(params.len() == self.m.len(), "adam state does not match parameter set");
        for (e, m) in params.entries().iter().zip(&self.m) {
            ensure!(e.value.numel() == m.len(), "adam moment shape mismatch for {}", e.name);
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((e, m), v) in params.entries_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = e.grad.data();
            let value = e.value.data_mut();
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                value[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
