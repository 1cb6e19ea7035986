//! Class-incremental learning testbed built around the pairwise loss matrix.
//!
//! An `N`-way classifier's loss splits into `N(N-1)` per-pair terms, which
//! arrange into a `T x T` grid of task blocks. Training task by task only
//! ever minimizes the diagonal blocks; the off-diagonal (inter-task) blocks
//! measure task confusion, while growth of an old diagonal block measures
//! forgetting. This crate computes those matrices for discriminative models
//! and for class-conditional generative models, and runs the usual
//! class-incremental strategies against them.
//!
//! Modules, bottom-up:
//!
//! - [`data`]: seeded Gaussian-blob and IDX task streams.
//! - [`models`]: linear and one-hidden-layer classifiers with analytic gradients.
//! - [`generative`]: per-class Gaussians, streaming LDA, replay sampling.
//! - [`analysis`]: loss matrices, block reports, forgetting and confusion scores.
//! - [`strategies`]: None, Joint, EWC, SI, distillation, labels trick,
//!   generative replay and generative classifiers.
//! - [`harness`]: configs, seeded grids, tables and theory checks.
//!
//! The runnable programs under `examples/` walk through each capability.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod generative;
pub mod harness;
pub mod models;
pub mod strategies;

pub use error::{Error, Result};
