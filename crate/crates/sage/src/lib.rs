//! Stage-adaptive reliability-guided audio-visual fusion for continuous
//! valence-arousal regression.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: f64 tensors, a reverse-mode differentiation graph, and
//!   a finite-difference gradient checker.
//! - [`dataio`]: feature/annotation files, audio-video alignment, clip
//!   segmentation, and a synthetic dataset generator.
//! - [`model`]: the fusion network (temporal convolutions, reliability
//!   gating, transformer encoder, regression head) and its checkpoints.
//! - [`metrics`]: concordance correlation coefficient as metric and loss,
//!   and dataset-level evaluation.
//! - [`harness`]: deterministic training, cross-validation, prediction
//!   stitching, and the reliability-gating comparison.
//! - [`cli`]: the `sage` command-line interface.

pub mod cli;
pub mod dataio;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod numerics;

pub use error::{Result, SageError};
