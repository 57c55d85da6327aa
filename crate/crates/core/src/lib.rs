//! Low-rank bilinear contextual bandits.
//!
//! The mean reward of action `a` under context `x` is `aᵀ Θ x` for an
//! unknown `d_a × d_x` representation matrix `Θ`. Each round the learner
//! refits `Θ` by nuclear-norm regularized least squares, picks the action
//! that maximizes the estimated total reward over the round's `L` contexts,
//! and occasionally perturbs it on a polynomially thinning schedule.
//!
//! All numerical code is generic over [`Real`] (`f32` or `f64`). The
//! concrete `f64` aliases at the crate root are what the CLI and the
//! experiments use.

pub mod environments;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod interpret;
pub mod io;
pub mod model;
pub mod policy;
pub mod rng;
pub mod scalar;

pub use error::{BanditError, Result};
pub use scalar::Real;

pub use model::{
    context_sum, expected_reward, ActionSpace, ActionVector, AlgorithmConfig, ContextBatch,
    History, Lambda0, Perturbation, RepresentationMatrix, RewardSample, Round, Svd,
};

/// `f64` representation matrix.
pub type Theta = model::RepresentationMatrix<f64>;
/// `f64` action vector.
pub type Action = model::ActionVector<f64>;
/// `f64` context batch.
pub type Batch = model::ContextBatch<f64>;
/// `f64` interaction log.
pub type Log = model::History<f64>;
/// `f64` action space.
pub type Space = model::ActionSpace<f64>;
/// `f64` estimator output.
pub type Estimate = estimator::EstimateReport<f64>;
/// `f64` per-trial metrics.
pub type Metrics = harness::TrialMetrics<f64>;
/// `f64` spectral summary.
pub type Spectrum = interpret::SpectralReport<f64>;
