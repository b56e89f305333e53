use std::collections::BTreeMap;

use super::{Rng, Tensor};
use crate::error::{ensure, Result};

/// Index of a parameter tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    tensors: Vec<Tensor>,
    by_name: BTreeMap<String, ParamId>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            kinds: Vec::new(),
            tensors: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    /// Registers a zero-initialised tensor. Names must be unique.
    pub fn register(&mut self, name: &str, shape: &[usize], kind: ParamKind) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.tensors.len());
        self.names.push(name.to_string());
        self.kinds.push(kind);
        self.tensors.push(Tensor::zeros(shape));
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn weight(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.register(name, shape, ParamKind::Weight)
    }

    pub fn bias(&mut self, name: &str, len: usize) -> ParamId {
        self.register(name, &[len], ParamKind::Bias)
    }

    /// Weights uniform in `(-scale, scale)`, biases zero, drawn in
    /// registration order.
    pub fn init_uniform(&mut self, scale: f64, rng: &mut Rng) {
        for (t, kind) in self.tensors.iter_mut().zip(&self.kinds) {
            match kind {
                ParamKind::Weight => t
                    .data_mut()
                    .iter_mut()
                    .for_each(|x| *x = rng.uniform_range(-scale, scale)),
                ParamKind::Bias => t.fill(0.0),
            }
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// `(name, tensor)` pairs sorted by name.
    pub fn sorted(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.by_name
            .iter()
            .map(|(n, id)| (n.as_str(), &self.tensors[id.0]))
    }

    /// Overwrites a tensor by name; the shape must match the registered one.
    pub fn assign(&mut self, name: &str, value: Tensor) -> Result<()> {
        let Some(id) = self.id(name) else {
            return Err(crate::Error::Checkpoint(format!(
                "unexpected parameter {name}"
            )));
        };
        let slot = &mut self.tensors[id.0];
        ensure!(
            slot.shape() == value.shape(),
            "parameter {name}: expected shape {:?}, got {:?}",
            slot.shape(),
            value.shape()
        );
        *slot = value;
        Ok(())
    }

    /// Sets every parameter to zero.
    pub fn zero_all(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.fill(0.0));
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_respects_kind_and_scale() {
        let mut s = ParamStore::new();
        let w = s.weight("w", &[4, 5]);
        let b = s.bias("b", 4);
        s.init_uniform(0.08, &mut Rng::seed(1));
        assert!(s.get(w).data().iter().all(|x| x.abs() < 0.08));
        assert!(s.get(w).data().iter().any(|&x| x != 0.0));
        assert!(s.get(b).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn assign_checks_shape() {
        let mut s = ParamStore::new();
        s.weight("w", &[2, 2]);
        assert!(s.assign("w", Tensor::zeros(&[2, 3])).is_err());
        assert!(s.assign("nope", Tensor::zeros(&[2, 2])).is_err());
        assert!(s.assign("w", Tensor::zeros(&[2, 2])).is_ok());
    }
}
