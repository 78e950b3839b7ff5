//! Minimal dense tensors with reverse-mode differentiation.

pub mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use graph::{Fault, Gradients, Graph, Var};
pub use params::{sgd_step, ParamEntry, ParamSet};
pub use tensor::Tensor;

pub(crate) use graph::mmd_value;

/// Layer-norm epsilon used throughout.
pub const LN_EPS: f64 = 1e-5;
