//! Gradient-tuned finite-length HMC chains: reverse- and forward-mode
//! differentiation, target registry, leapfrog and Metropolis-Hastings kernels,
//! EMLBO training, bias diagnostics and ground-truth oracles.

// comparisons are written negated on purpose so that NaN fails them
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod chain;
pub mod dual;
pub mod error;
pub mod eval;
pub mod hmc;
pub mod kv;
pub mod linalg;
pub mod oracles;
pub mod targets;
pub mod trainer;

pub use error::{Error, Result};
