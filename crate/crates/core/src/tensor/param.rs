use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// A named trainable matrix.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    /// Biases and normalization gains skip weight decay.
    pub decay_exempt: bool,
    /// Rows are touched only through row lookups; the optimizer skips rows
    /// whose gradient is exactly zero.
    pub row_sparse: bool,
}

/// Owns every parameter of a model. Graphs borrow it read-only.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        value: Tensor,
        decay_exempt: bool,
    ) -> Result<ParamId, TensorError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(TensorError::Contract(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad: None,
            decay_exempt,
            row_sparse: false,
        });
        Ok(id)
    }

    /// Weight matrix with uniform Glorot init.
    pub fn add_weight<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<ParamId, TensorError> {
        self.add(name, glorot_uniform(rows, cols, rng), false)
    }

    pub fn add_bias(&mut self, name: impl Into<String>, cols: usize) -> Result<ParamId, TensorError> {
        self.add(name, Tensor::zeros(1, cols), true)
    }

    pub fn mark_row_sparse(&mut self, id: ParamId) {
        self.params[id.0].row_sparse = true;
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn scalar_count_of(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|&id| self.value(id).len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Gives every parameter without a gradient an all-zero one.
    pub fn fill_missing_grads(&mut self) {
        for p in &mut self.params {
            if p.grad.is_none() {
                p.grad = Some(Tensor::zeros(p.value.rows(), p.value.cols()));
            }
        }
    }

    /// Adds gradients produced by a graph into the stored grad slots.
    pub fn accumulate_grads(&mut self, grads: &ParamGrads) {
        for (id, g) in &grads.0 {
            let p = &mut self.params[id.0];
            match &mut p.grad {
                Some(existing) => existing.add_assign(g),
                None => p.grad = Some(g.clone()),
            }
        }
    }
}

/// Gradients for parameters, keyed and ordered by id.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads(pub std::collections::BTreeMap<ParamId, Tensor>);

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.0.get(&id)
    }

    /// Sums `other` into `self`.
    pub fn merge(&mut self, other: ParamGrads) {
        for (id, g) in other.0 {
            match self.0.get_mut(&id) {
                Some(e) => e.add_assign(&g),
                None => {
                    self.0.insert(id, g);
                }
            }
        }
    }
}

pub fn glorot_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("sized buffer")
}
