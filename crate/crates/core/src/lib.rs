//! Contrastive-guided diffusion sampling and self-training on synthetic data.

// Negated comparisons are how validation rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod error;
pub mod gaussian;
pub mod guidance;
pub mod rng;
pub mod selection;
pub mod self_training;

pub use error::{LabError, Result};
