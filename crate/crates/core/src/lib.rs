//! Few-shot episodic classification with a multi-class least-squares SVM
//! base learner.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense matrices, SPD solves, softmax, layer norm, PCA.
//! - [`episode`]: episodes, synthetic task sampler, feature banks and splits.
//! - [`coding`]: one-vs-all / one-vs-one / random ECOC coding matrices.
//! - [`lssvm`]: the KKT-system LSSVM learner and its implicit-gradient VJP.
//! - [`baselines`]: prototype nearest-neighbour and ridge regression learners.
//! - [`transduction`]: inverse attention over support samples and iterated
//!   pseudo-support prototypes.
//! - [`engine`]: backbone MLP, loss, optimizer, training, evaluation, timing.
//! - [`config`], [`checkpoint`], [`commands`]: the run configuration, the
//!   checkpoint format and the command implementations behind the CLI.

// `!(x > 0.0)` rejects NaN as well, and dense kernels index several arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::large_enum_variant)]

extern crate self as fsl_core;

pub mod baselines;
pub mod checkpoint;
pub mod coding;
pub mod commands;
pub mod config;
pub mod engine;
pub mod episode;
pub mod error;
pub mod lssvm;
pub mod numerics;
pub mod rng;
pub mod transduction;

pub use error::{Error, Result};
pub use numerics::Matrix;

#[cfg(test)]
#[path = "../tests/common/mod.rs"]
mod common;
