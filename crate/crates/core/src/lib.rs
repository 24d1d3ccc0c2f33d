//! Tabular MDPs with multi-step transition predictions.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::needless_range_loop)]

pub mod analysis;
pub mod bola;
pub mod cli;
pub mod envs;
pub mod error;
pub mod mdp;
pub mod planner;
pub mod prediction;
pub mod rng;

pub use error::{Error, Result};
