//! Tabular offline reinforcement-learning laboratory.
//!
//! Everything here operates on small finite MDPs that can be solved exactly, so
//! every estimator and every bound has a ground-truth oracle to be checked against:
//!
//! - [`mdp`]: tabular MDPs, policies, exact occupancies, values and returns.
//! - [`dataset`]: offline transition logs, behaviour regimes, reward corruption.
//! - [`ratio`]: stationary distribution-ratio estimators (DualDICE, MWL, DV-KL, classifier).
//! - [`variance`]: marginalized and episodic IS variance, Fenchel duals, augmented rewards.
//! - [`theory`]: numerical verifiers for the variance and improvement bounds.
//! - [`offline`]: batch / behaviour-constrained Q-iteration and the variance-regularized loop.

pub mod dataset;
pub mod error;
mod linalg;
pub mod mdp;
pub mod offline;
pub mod optim;
pub mod ratio;
pub mod rng;
mod textio;
pub mod theory;
pub mod variance;

pub use error::{Error, Result};

/// Version tag written as the first line of every file this crate emits.
pub const FORMAT_TAG: &str = "# ovrlab-format 1";
