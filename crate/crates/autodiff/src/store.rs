use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::graph::Gradients;
use crate::real::Real;
use crate::tensor::Tensor;

/// One line of a parameter manifest.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

/// Named tensors in insertion order. Trainable tensors carry
/// `requires_grad = true`; frozen buffers do not.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            tensors: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.tensors.shift_remove(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.tensors
            .iter()
            .filter(|(_, t)| t.requires_grad)
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// Number of trainable scalar values.
    pub fn num_trainable(&self) -> usize {
        self.tensors
            .values()
            .filter(|t| t.requires_grad)
            .map(Tensor::numel)
            .sum()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.tensors
            .iter()
            .map(|(n, t)| ManifestEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
                trainable: t.requires_grad,
            })
            .collect()
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.get_mut(name)?.requires_grad = trainable;
        Ok(())
    }

    /// Freeze every tensor.
    pub fn freeze_all(&mut self) {
        for t in self.tensors.values_mut() {
            t.requires_grad = false;
        }
    }

    /// Copy every tensor of `other` in under `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamStore<T>) {
        for (n, t) in other.iter() {
            self.insert(format!("{prefix}{n}"), t.clone());
        }
    }

    /// Tensors whose name starts with `prefix`, with the prefix stripped.
    pub fn extract_prefix(&self, prefix: &str) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (n, t) in self.iter() {
            if let Some(rest) = n.strip_prefix(prefix) {
                out.insert(rest.to_string(), t.clone());
            }
        }
        out
    }

    pub fn set_grads(&mut self, grads: &Gradients<T>) -> Result<()> {
        for (name, g) in grads.iter() {
            let t = self.get_mut(name)?;
            if g.len() != t.numel() {
                return Err(Error::shape(
                    "set_grads",
                    format!("gradient for '{name}' has wrong length"),
                ));
            }
            t.grad = Some(g.to_vec());
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors.values_mut() {
            t.grad = None;
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
        }
    }

    /// Bitwise comparison of names, shapes, values and trainable flags.
    pub fn bit_eq(&self, other: &ParamStore<T>) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(other.tensors.iter())
                .all(|((na, a), (nb, b))| {
                    na == nb && a.requires_grad == b.requires_grad && a.bit_eq(b)
                })
    }
}
