//! Output-noise covariance synthesis for privacy-preserving data release from
//! linear dynamical systems.
//!
//! A data-releasing LTI system publishes its input/output trajectories; an
//! eavesdropper running the best linear unbiased estimator can reconstruct
//! the initial state from them. This crate designs the covariance of additive
//! Gaussian output noise so that the eavesdropper's estimation-error
//! covariance equals a prescribed confusion ellipsoid, at the best achievable
//! output distortion. It also provides structured (per-step uncorrelated)
//! approximations, entropy-based and isotropic-noise baselines, Monte Carlo
//! validation of the adversary model, and a four-zone building-thermal case
//! study.

pub mod baselines;
pub mod error;
pub mod estimation;
pub mod hvac;
pub mod io;
pub mod linalg;
pub mod lti;
pub mod mechanism;
pub mod montecarlo;
pub mod random;
pub mod structured;

pub use error::{Error, Result};
pub use lti::{LtiSystem, ObservabilityReport, StackedSystem};
pub use mechanism::{design_optimal, NoiseDesign, SolutionFamily};
