use std::collections::BTreeMap;

use crate::error::Result;
use crate::tensor::Tensor;

/// Named gradient accumulator keyed by parameter path; iteration order is
/// lexicographic, which keeps optimizer updates deterministic.
#[derive(Debug, Default)]
pub struct GradStore {
    grads: BTreeMap<String, Tensor>,
}

impl GradStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, name: &str, grad: Tensor) -> Result<()> {
        match self.grads.get_mut(name) {
            Some(existing) => existing.add_scaled(&grad, 1.0),
            None => {
                self.grads.insert(name.to_string(), grad);
                Ok(())
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }
}
