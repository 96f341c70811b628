//! Entropic optimal transport learned through energy-based potentials.
//!
//! The library trains a scalar potential network so that the Gibbs
//! conditionals `mu_x^f(y) ∝ exp((f(y) - c(x,y)) / eps)` approximate the
//! optimal entropic transport plan between a source and a target
//! distribution. Negative samples for the training gradient come from
//! unadjusted Langevin chains with a persistent replay buffer.
//!
//! Independent oracles (log-domain Sinkhorn, grid quadrature of the weak
//! dual objective, the closed-form Gaussian plan) live in [`solvers`] and
//! back the validation suite; [`eval`] provides the Bures-Wasserstein
//! plan metrics.

pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod nn;
pub mod rng;
pub mod sampler;
pub mod solvers;
pub mod trainer;

pub use error::EotError;
