//! Bayesian vector autoregression with shrinkage and sparsity priors and
//! particle-Gibbs stochastic volatility.
//!
//! The crate estimates VAR(P) systems under five coefficient priors —
//! horseshoe, spike-and-slab discrete mixture, Student's t, Laplace, and
//! ridge — with a common stochastic-volatility error model: random-walk log
//! standard deviations, an LKJ-distributed static correlation matrix, and
//! half-Cauchy innovation scales, updated by particle Gibbs with backwards
//! simulation.
//!
//! Start with the `examples/` directory for runnable walkthroughs of each
//! capability, or the `bvar` binary for the simulation / fit / forecast /
//! summarize workflows.

pub mod data;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod mixture;
pub mod model;
pub mod shrinkage;
pub mod store;
pub mod sv;

pub use error::{Error, Result};
