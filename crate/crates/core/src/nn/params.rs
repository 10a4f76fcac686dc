use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Receives gradients and optimizer updates.
    pub trainable: bool,
}

/// Named parameter registry shared by the layers of one network.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor; values are stored at `f32` precision.
    pub fn add(&mut self, name: impl Into<String>, mut value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        value.round_to_f32();
        self.params.push(Param {
            name,
            value,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(n, p)| (ParamId(n), p))
    }

    /// Total scalar count over all stored tensors.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn trainable_scalar_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Copies values from `other` by name; every name and shape must match.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Format(format!(
                "parameter count {} does not match {}",
                other.len(),
                self.len()
            )));
        }
        for p in &mut self.params {
            let src = other
                .find(&p.name)
                .map(|id| other.get(id))
                .ok_or_else(|| Error::Format(format!("missing parameter {}", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::Format(format!("shape mismatch for {}", p.name)));
            }
            p.value = src.value.clone();
        }
        Ok(())
    }
}

/// Zero-mean normal weights with variance `2 / fan_in`.
pub fn he_normal<R: Rng>(shape: [usize; 4], fan_in: usize, rng: &mut R) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| normal.sample(rng)).collect()).expect("length matches")
}
