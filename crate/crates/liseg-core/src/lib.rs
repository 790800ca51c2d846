//! Core library for label-efficient 3D liver segmentation: a small
//! reverse-mode autodiff engine, a scalable six-stage encoder–decoder,
//! volume I/O and preprocessing, a synthetic phantom generator, dual-network
//! co-training with pseudo-labels, and segmentation metrics.

pub mod data;
pub mod error;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
