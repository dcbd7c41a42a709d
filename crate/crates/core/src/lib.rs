//! Simulation and analysis of spontaneous-localization (GRW) collapse for
//! macroscopic marbles: single-marble Gaussian collapse dynamics, the
//! competing "how many marbles are in the box" criteria on n-marble product
//! states, and a Monte Carlo model of an operational counting chain.

// Range checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod collapse_dynamics;
pub mod criteria;
pub mod error;
pub mod logprob;
pub mod measurement_chain;
pub mod rng;
pub mod state_algebra;

pub use error::{Error, Result};
pub use logprob::{LogValue, Sign};
