//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is rebuilt for every step: leaves are registered with
//! [`Graph::param`] / [`Graph::constant`], ops are recorded as they are
//! evaluated, and [`Graph::backward`] walks the tape in reverse.

mod adam;
mod catalog;
mod gradcheck;
mod graph;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use catalog::{check_catalog, OpCheck};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamCheck};
pub use graph::{Graph, OpKind, Var};
pub use tensor::{Element, Tensor};

#[derive(Debug, Error)]
pub enum AgError {
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible input shapes {shapes:?}")]
    ShapeMismatch { op: String, shapes: Vec<Vec<usize>> },
    #[error("{op}: wrong number of inputs ({got})")]
    Arity { op: String, got: usize },
    #[error("unknown op kind `{0}`")]
    UnknownOp(String),
    #[error("node {0} does not belong to this graph")]
    UnknownVar(usize),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("optimizer state does not match parameters: {0}")]
    StateMismatch(String),
}

/// A tensor with a stable, human-readable name (e.g. `point.0.weight`).
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, tensor: Tensor<f32>) -> Self {
        Self { name: name.into(), tensor }
    }
}
