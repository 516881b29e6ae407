#![no_std]
#![warn(missing_docs)]
// `!(x > 0.0)` is how NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Stationary policies of group-relative policy optimisation (GRPO).
//!
//! GRPO trains a policy against group-normalised rewards and a penalty that
//! pulls it toward a reference policy. At a stationary point the old and new
//! policies coincide, which turns the training objective into a per-context
//! fixed-point condition on a probability vector. This crate evaluates the
//! pieces of that condition and solves it:
//!
//! - [`preference`]: group advantages and the expected group-relative
//!   preference of an output, exactly or by Monte Carlo.
//! - [`divergence`]: the GRPO penalty, forward and reverse KL, and gradients.
//! - [`solver`]: the per-context objective, the stationarity residual, a damped
//!   fixed-point solver for every variant, and the RLHF / NLHF baselines.
//! - [`binary`]: closed forms for two-answer questions.
//! - [`oracle`]: brute-force best-response iteration used to cross-check the
//!   solver.
//! - [`trainer`]: a sampled tabular GRPO loop with clipping.
//!
//! The crate is `no_std` and only needs `alloc`. Scenario files, CSV and the
//! command-line tool live in the `prefagg` crate.

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod binary;
pub mod divergence;
mod error;
pub mod oracle;
pub mod preference;
pub mod roots;
pub mod scenario;
pub mod simplex;
pub mod solver;
pub mod trainer;

pub use error::{Error, Result};
pub use scenario::{
    ContextSpec, GroupSize, Hyperparams, Normalisation, OutputSpec, Penalty, PolicyTable,
    RewardSpec, Scenario,
};
