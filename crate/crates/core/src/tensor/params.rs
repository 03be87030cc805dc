use std::collections::HashMap;

use super::Tensor;
use crate::error::{contract, Result};

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    tensor: Tensor,
    weight_decay: bool,
}

/// Named network parameters in insertion order.
///
/// Each entry carries a flag telling the optimizer whether decoupled weight
/// decay applies to it. Names are unique and shapes are fixed once inserted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor, weight_decay: bool) -> Result<()> {
        if self.index.contains_key(name) {
            contract!("duplicate parameter name {name:?}");
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            tensor,
            weight_decay,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.entries[i].tensor)
    }

    /// Replaces the value of an existing parameter; the shape must not change.
    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let Some(i) = self.position(name) else {
            contract!("unknown parameter {name:?}");
        };
        let e = &mut self.entries[i];
        if e.tensor.shape() != tensor.shape() {
            contract!(
                "parameter {name:?} has shape {:?}, got {:?}",
                e.tensor.shape(),
                tensor.shape()
            );
        }
        e.tensor = tensor;
        Ok(())
    }

    pub fn weight_decay_applies(&self, name: &str) -> Option<bool> {
        self.position(name).map(|i| self.entries[i].weight_decay)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.tensor))
    }

    pub(crate) fn tensor_at(&self, i: usize) -> &Tensor {
        &self.entries[i].tensor
    }

    pub(crate) fn tensor_at_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].tensor
    }

    pub(crate) fn decay_at(&self, i: usize) -> bool {
        self.entries[i].weight_decay
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Replaces every value with zero, keeping names, shapes and flags.
    pub fn zero_all(&mut self) {
        for e in &mut self.entries {
            e.tensor.data_mut().fill(0.0);
        }
    }

    /// Copies matching entries from `other`, requiring identical names and shapes.
    pub fn load_from(&mut self, other: &[(String, Tensor)]) -> Result<()> {
        if other.len() != self.entries.len() {
            contract!(
                "expected {} parameters, got {}",
                self.entries.len(),
                other.len()
            );
        }
        for (name, t) in other {
            self.set(name, t.clone())?;
        }
        Ok(())
    }
}

/// Gradients aligned entry-for-entry with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store
                .entries
                .iter()
                .map(|e| Tensor::zeros(e.tensor.shape()))
                .collect(),
        }
    }

    pub fn get(&self, store: &ParamStore, name: &str) -> Option<&Tensor> {
        store.position(name).map(|i| &self.grads[i])
    }

    pub fn set(&mut self, store: &ParamStore, name: &str, g: Tensor) -> Result<()> {
        let Some(i) = store.position(name) else {
            contract!("unknown parameter {name:?}");
        };
        if self.grads[i].shape() != g.shape() {
            contract!(
                "gradient for {name:?} has shape {:?}, expected {:?}",
                g.shape(),
                self.grads[i].shape()
            );
        }
        self.grads[i] = g;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub(crate) fn at(&self, i: usize) -> &Tensor {
        &self.grads[i]
    }

    /// `self += other`, elementwise.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f32) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(Tensor::all_finite)
    }
}
