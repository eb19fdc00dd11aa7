//! The adversary model: optimal unbiased estimation of the initial state
//! from released input/output data.
//!
//! Noise-free releases pin the initial state down exactly (least squares on
//! the stacked data equation). Releases perturbed by zero-mean Gaussian noise
//! with covariance `Sigma` are attacked with generalized least squares, whose
//! estimate is the best linear unbiased one and whose error covariance
//! `(Oᵀ Sigma⁻¹ O)⁻¹` is the confusion set every design in this crate
//! manipulates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::lti::StackedSystem;

/// Condition number of the noise covariance above which results carry an
/// ill-conditioning warning instead of failing.
pub const CONDITION_WARNING: f64 = 1e12;

/// Initial-state estimate with its analytic error covariance.
#[derive(Debug, Clone)]
pub struct StateEstimate {
    pub x0: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Condition number of the noise covariance used.
    pub condition: f64,
}

impl StateEstimate {
    pub fn ill_conditioned(&self) -> bool {
        self.condition > CONDITION_WARNING
    }
}

/// GLS estimator in matrix form: `x0_hat = gain · (y - T u)`.
///
/// Precomputing the gain lets Monte Carlo trials reuse one factorization.
#[derive(Debug, Clone)]
pub struct GlsGain {
    /// n x pK estimator matrix `(OᵀSigma⁻¹O)⁻¹ OᵀSigma⁻¹`.
    pub gain: DMatrix<f64>,
    /// n x n error covariance `(OᵀSigma⁻¹O)⁻¹`.
    pub cov: DMatrix<f64>,
    pub condition: f64,
}

impl GlsGain {
    pub fn ill_conditioned(&self) -> bool {
        self.condition > CONDITION_WARNING
    }
}

/// Exact initial-state reconstruction from a noise-free release:
/// `x0 = Wo⁻¹ Oᵀ (y - T u)`.
pub fn reconstruct_exact(
    stacked: &StackedSystem,
    y: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    stacked.require_observable()?;
    check_release_lengths(stacked, y, u)?;
    let residual = y - &stacked.toeplitz * u;
    let rhs = stacked.obs.transpose() * residual;
    let chol = linalg::cholesky_spd(&stacked.gramian, "observability gramian")?;
    Ok(chol.solve(&rhs))
}

/// Factorize the GLS estimator for noise covariance `sigma`.
///
/// Solve-based throughout: `sigma` and the information matrix are factorized
/// by Cholesky, never inverted elementwise.
pub fn gls_gain(stacked: &StackedSystem, sigma: &DMatrix<f64>) -> Result<GlsGain> {
    stacked.require_observable()?;
    let pk = stacked.stacked_dim();
    if sigma.shape() != (pk, pk) {
        return Err(Error::DimensionMismatch(format!(
            "noise covariance is {}x{}, expected {pk}x{pk}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    linalg::check_finite_matrix(sigma, "Sigma")?;
    let chol_sigma = linalg::cholesky_spd(sigma, "Sigma")?;
    let condition = linalg::condition_sym(sigma);

    // whitened = Sigma⁻¹ O; information = Oᵀ Sigma⁻¹ O.
    let whitened = chol_sigma.solve(&stacked.obs);
    let information = linalg::symmetrize(&(stacked.obs.transpose() * &whitened));
    let chol_info = linalg::cholesky_spd(&information, "information matrix")?;
    let cov = linalg::symmetrize(&chol_info.inverse());
    let gain = chol_info.solve(&whitened.transpose());
    Ok(GlsGain {
        gain,
        cov,
        condition,
    })
}

/// Best linear unbiased estimate of the initial state from a perturbed
/// release `(y_tilde, u)` with noise covariance `sigma`.
pub fn estimate_gls(
    stacked: &StackedSystem,
    y_tilde: &DVector<f64>,
    u: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<StateEstimate> {
    check_release_lengths(stacked, y_tilde, u)?;
    let gls = gls_gain(stacked, sigma)?;
    let residual = y_tilde - &stacked.toeplitz * u;
    Ok(StateEstimate {
        x0: &gls.gain * residual,
        cov: gls.cov,
        condition: gls.condition,
    })
}

/// Adversary error covariance `(Oᵀ sigma⁻¹ O)⁻¹` for a given noise covariance.
pub fn confusion_covariance(stacked: &StackedSystem, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(gls_gain(stacked, sigma)?.cov)
}

/// Adversary covariance when the released signal is perturbed at the source,
/// i.e. the initial state itself carries zero-mean noise with covariance
/// `sigma_v`: the estimator error covariance is `sigma_v` itself. This is the
/// reference the output-noise designs must match.
pub fn initial_perturbation_confusion(sigma_v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if sigma_v.nrows() != sigma_v.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {}x{}, expected square",
            sigma_v.nrows(),
            sigma_v.ncols()
        )));
    }
    linalg::check_finite_matrix(sigma_v, "Sigma_v")?;
    linalg::cholesky_spd(sigma_v, "Sigma_v")?;
    Ok(sigma_v.clone())
}

fn check_release_lengths(
    stacked: &StackedSystem,
    y: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<()> {
    if y.len() != stacked.stacked_dim() {
        return Err(Error::DimensionMismatch(format!(
            "stacked output has length {}, expected {}",
            y.len(),
            stacked.stacked_dim()
        )));
    }
    if u.len() != stacked.toeplitz.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "stacked input has length {}, expected {}",
            u.len(),
            stacked.toeplitz.ncols()
        )));
    }
    linalg::check_finite_vector(y, "Y")?;
    linalg::check_finite_vector(u, "U")?;
    Ok(())
}
