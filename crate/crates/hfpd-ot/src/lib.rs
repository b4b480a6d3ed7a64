//! Hierarchical fully probabilistic design over discrete transport plans:
//! entropic baselines, a hyperprior over plans with marginal knowledge
//! constraints, HMC sampling in an unconstrained chart, stochastic
//! quasi-Newton calibration of the constraint multipliers, and
//! fairness/data-repair experiment drivers.

pub mod config;
pub mod core;
pub mod eot;
pub mod error;
pub mod fairness;
pub mod hyperprior;
pub mod io;
pub mod potentials;
pub mod sampler;

pub use error::{HfpdError, Result};
