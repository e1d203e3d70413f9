//! Teacher-student knowledge transfer for binary tick-image classification.
//!
//! This crate implements, end to end and on the CPU:
//!
//! - a minimal reverse-mode autodiff engine with exactly the operators a
//!   small image CNN needs ([`tensor`]);
//! - the "lighter CNN" architecture with parameter accounting, attention
//!   hooks and a versioned model file format ([`model`]);
//! - spatial attention maps, the attention-transfer loss, temperature
//!   softening and the two-student label-smoothing protocol ([`distill`]);
//! - dataset splitting, augmentation, Adam, and the three training
//!   strategies — scratch baseline, attention transfer, and attention
//!   transfer with label smoothing ([`train`]);
//! - binary classification metrics with brute-force-verified ROC-AUC and
//!   average-precision implementations ([`metrics`]);
//! - image and manifest I/O plus a synthetic two-class generator that
//!   stands in for the private tick dataset ([`data`]);
//! - the `tickdist` command-line interface ([`cli`]).
//!
//! Start with the runnable programs under `examples/`.

pub mod cli;
pub mod data;
pub mod distill;
pub mod error;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, ErrorKind, Result};
pub use tensor::{Graph, NodeId, Scalar, Tensor};
