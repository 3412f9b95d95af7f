//! Named parameter collections and their tape bindings.

use std::collections::BTreeMap;

use super::matrix::Matrix;
use super::tape::{Gradients, Tape, Var};

/// Model parameters keyed by name. Iteration order is the sorted name order,
/// which also fixes the checkpoint layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Matrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> &Matrix {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Matrix {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.tensors.iter()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(|m| m.data().len()).sum()
    }

    /// Loads every tensor onto a tape as a leaf, so gradients can be read
    /// back by name after `backward`.
    pub fn bind(&self, tape: &Tape) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(name, value)| (name.clone(), tape.leaf(value.clone())))
            .collect();
        BoundParams { vars }
    }
}

/// Tape handles for one [`ParamSet`], valid for the tape that bound them.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    /// Collects gradients per parameter name, zero-filled for parameters the
    /// loss never touched.
    pub fn grads(&self, tape: &Tape, gradients: &Gradients) -> BTreeMap<String, Matrix> {
        self.vars
            .iter()
            .map(|(name, &var)| {
                (name.clone(), gradients.get_or_zeros(var, tape.shape(var)))
            })
            .collect()
    }
}
