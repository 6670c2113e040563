//! Minimal dense math: f64 tensors, a recorded-operation graph with
//! reverse-mode differentiation, and a finite-difference gradient checker.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, DEFAULT_STEP};
pub use graph::{Gradients, Graph, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
