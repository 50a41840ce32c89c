//! SDE-driven spatio-temporal hypergraph neural networks for irregular
//! longitudinal connectome data.

// `!(x >= 0.0)` also rejects NaN; index loops follow the matrix formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checkpoint;
pub mod cli;
pub mod cohort;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod hypergraph;
pub mod model;
pub mod nn;
pub mod objective;
pub mod pipeline;
pub mod reconstruction;
pub mod sde;
pub mod tensor;

pub use error::{Error, Result};
