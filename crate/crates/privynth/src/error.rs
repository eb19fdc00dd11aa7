//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by system construction, estimation, and design routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or vector dimensions are inconsistent with the declared sizes.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An input contains a NaN or infinite entry.
    #[error("non-finite entry at {0}")]
    NonFinite(String),

    /// A matrix required to be symmetric positive definite is not.
    #[error("{0} is not symmetric positive definite")]
    NotPositiveDefinite(String),

    /// The state matrix has an eigenvalue on or outside the unit circle.
    #[error("state matrix is not Schur stable: eigenvalue modulus {modulus}")]
    NotSchurStable { modulus: f64 },

    /// The observability matrix does not have full column rank.
    #[error("observability matrix is rank deficient: rank {rank}, need {needed}")]
    RankDeficient { rank: usize, needed: usize },

    /// A scalar or structural argument violates a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// No admissible design exists for the requested configuration.
    #[error("infeasible: {0}")]
    Infeasible(String),
}

impl Error {
    /// True for errors caused by an unsolvable problem instance rather than
    /// malformed input. The CLI maps these to a distinct exit code.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::NotSchurStable { .. } | Error::RankDeficient { .. } | Error::Infeasible(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
