//! Dense differentiable matrices, parameters, and the optimizer.

mod graph;
mod matrix;
mod optim;
mod param;

pub mod gradcheck;

pub use graph::{sigmoid, softmax_in_place, Graph, Var};
pub use matrix::{dot, Tensor};
pub use optim::AdamW;
pub use param::{glorot_uniform, ParamGrads, ParamId, ParamStore, Parameter};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
}
