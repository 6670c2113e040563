//! Masked concordance correlation: metric, differentiable loss, and
//! dataset-level evaluation.

mod ccc;
mod evaluate;
mod loss;

pub use ccc::{ccc, ccc_components, ccc_unmasked, CccComponents};
pub use evaluate::{evaluate, EvalReport};
pub use loss::ccc_loss;
