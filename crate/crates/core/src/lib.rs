//! Band-attention convolutional networks for hyperspectral image patch
//! classification, built on a from-scratch differentiable tensor core.
//!
//! The crate is organized along the processing pipeline:
//!
//! - [`tensor`] / [`tape`] / [`ops`] — dense f64 tensors and reverse-mode
//!   differentiation,
//! - [`layers`] — convolution, batch norm, pooling, dense, activations,
//!   dropout, cross-entropy,
//! - [`attention`] — the band attention module and the SE-style baseline,
//! - [`model`] — the VGG-style classification module and variant assembly,
//! - [`data`] — cube/label ingestion, patch extraction, and the sampling
//!   protocol,
//! - [`training`] — Adam, the epoch loop, checkpoints, and the ablation
//!   harness,
//! - [`metrics`] — confusion matrix, OA/AA/Kappa, repeat aggregation,
//! - [`gradcheck`] — the finite-difference verification suite.

pub mod attention;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
mod linalg;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tape::Tape;
pub use tensor::{Shape4, Tensor};
