//! Dense tensor math with reverse-mode differentiation, graph layers and
//! the RMSProp optimizer. Everything is 64-bit.

pub mod layers;
mod optim;
mod tape;
mod tensor;

use std::collections::BTreeMap;

use thiserror::Error;

pub use optim::RmsProp;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::rng::RngStream;

/// Leaky-ReLU negative slope used by every layer.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("parameter `{0}` missing from store")]
    MissingParam(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

/// Named parameter tensors, ordered by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> ParamStore {
        let tensors = self
            .tensors
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::new(t.shape().to_vec(), vec![0.0; t.len()])))
            .collect();
        ParamStore { tensors }
    }

    /// Adds `other` entrywise; both stores must hold the same names.
    pub fn add_assign(&mut self, other: &ParamStore) {
        for (name, t) in other.iter() {
            self.tensors
                .get_mut(name)
                .unwrap_or_else(|| panic!("parameter `{name}` missing in accumulator"))
                .add_assign(t);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.tensors.values_mut() {
            t.scale_in_place(c);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.values().map(Tensor::sq_norm).sum::<f64>().sqrt()
    }
}

/// Glorot-uniform matrix: entries uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut RngStream) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| (2.0 * rng.uniform() - 1.0) * limit)
        .collect();
    Tensor::from_rows(rows, cols, data)
}
