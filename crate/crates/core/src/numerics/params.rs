use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// Named trainable tensors. Iteration is in lexicographic name order, which
/// is also the on-disk order of checkpoints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore<S> {
    tensors: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> ParameterStore<S> {
    pub fn new() -> Self {
        ParameterStore {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name}")));
        }
        self.tensors.insert(name, tensor.with_requires_grad(true));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors.values_mut() {
            t.zero_grad();
        }
    }

    /// Euclidean norm over all gradient buffers; missing grads count as zero.
    pub fn grad_norm(&self) -> S {
        self.tensors
            .values()
            .filter_map(|t| t.grad())
            .flat_map(|g| g.iter())
            .map(|&g| g * g)
            .sum::<S>()
            .sqrt()
    }

    /// Scales all gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: S) -> S {
        let norm = self.grad_norm();
        if norm > max_norm && norm > S::zero() {
            let factor = max_norm / norm;
            for t in self.tensors.values_mut() {
                if let Some(g) = t.grad_mut() {
                    g.iter_mut().for_each(|v| *v *= factor);
                }
            }
        }
        norm
    }

    /// `self ← decay·self + (1 − decay)·src`, tensor by tensor.
    pub fn blend_toward(&mut self, src: &ParameterStore<S>, decay: S) -> Result<()> {
        for (name, t) in self.tensors.iter_mut() {
            let s = src.get(name)?;
            if s.shape() != t.shape() {
                return Err(Error::Shape {
                    op: "blend_toward",
                    lhs: t.shape().to_vec(),
                    rhs: s.shape().to_vec(),
                });
            }
            let keep = S::one() - decay;
            for (a, &b) in t.data_mut().iter_mut().zip(s.data()) {
                *a = decay * *a + keep * b;
            }
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ParameterStore<T> {
        ParameterStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}
