//! Pseudo-radar synthesis from LiDAR, Chamfer evaluation, and the
//! radar/camera contrastive loss stack used for pretraining.
//!
//! Module map:
//! - [`tensor`]: dense tensors with tape-based reverse-mode gradients
//! - [`pointcloud`]: point and frame types, CSV / binary frame I/O
//! - [`gmm`]: 1-D Gaussian mixture over per-frame radar point counts
//! - [`spatial`]: KD-tree, k-NN and redundancy thinning
//! - [`l2r`]: the LiDAR-to-radar sampling pipeline
//! - [`metrics`]: Chamfer distance and corpus reports
//! - [`contrastive`]: local column and global contrastive losses, toy trainer
//! - [`synth`]: deterministic synthetic scenes and feature batches

// `!(x > 0.0)` style checks are meant to reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod tensor;

pub use tensor::{Tape, Tensor, TensorError, Var};
pub mod contrastive;
pub mod gmm;
pub mod l2r;
pub mod metrics;
pub mod pointcloud;
pub mod rng;
pub mod spatial;
pub mod synth;
