use super::{Gradients, Tape, Tensor, Var};
use crate::error::{ensure, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Ordered, named collection of trainable tensors with gradient buffers.
///
/// Declaration order is significant: checkpoints store tensors in it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    frozen: bool,
}

/// Tape handles for every entry of a [`ParamSet`], in declaration order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    trainable: bool,
}

impl Bound {
    pub fn var(&self, index: usize) -> Var {
        self.vars[index]
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter and returns its index.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let grad = Tensor::zeros(value.shape());
        self.entries.push(ParamEntry { name: name.into(), value, grad });
        self.entries.len() - 1
    }

    /// Marks the set read-only; optimizers refuse to step a frozen set.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn value(&self, index: usize) -> &Tensor {
        &self.entries[index].value
    }

    pub fn value_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.entries[index].value
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    /// Number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Number of scalar parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.value.numel())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(0.0);
        }
    }

    /// Records every parameter on `tape`, as tracked leaves when `trainable`
    /// and as constants otherwise.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|e| if trainable { tape.param(e.value.clone()) } else { tape.constant(e.value.clone()) })
            .collect();
        Bound { vars, trainable }
    }

    /// Adds the gradients of a backward pass into the gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients, bound: &Bound) -> Result<()> {
        ensure!(bound.vars.len() == self.entries.len(), "binding does not match parameter set");
        ensure!(bound.trainable, "cannot accumulate gradients into a frozen binding");
        for (e, &v) in self.entries.iter_mut().zip(&bound.vars) {
            if let Some(g) = grads.get(v) {
                for (a, b) in e.grad.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
        Ok(())
    }

    /// Flat copy of all parameter values, used for equality checks.
    pub fn flat_values(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|e| e.value.data().iter().copied()).collect()
    }
}
