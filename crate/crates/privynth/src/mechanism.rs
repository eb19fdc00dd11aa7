//! Output-noise covariance synthesis.
//!
//! Goal: choose the covariance `Sigma` of additive Gaussian output noise so
//! that the GLS adversary's error covariance `(Oᵀ Sigma⁻¹ O)⁻¹` equals a
//! prescribed confusion covariance `Sigma_v`, then pick the member of the
//! feasible family with the best output distortion.
//!
//! The feasible precisions `X = Sigma⁻¹` form an affine family
//! `X = NᵀN + R - M R M` over symmetric `R`, where `M = O Wo⁻¹ Oᵀ` is the
//! orthogonal projector onto the range of the observability matrix and
//! `N = Sigma_v^{-1/2} Wo⁻¹ Oᵀ` is a whitened reconstruction gain. On the
//! range of `O` every member acts identically; off it, `R` is free. The
//! surrogate distortion `pK / λ_min(X)` is minimized by diagonalizing `NᵀN`
//! on the range block and filling the complement with a free constant
//! `c_free`, giving a closed-form optimum with no numerical SDP solving.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::lti::StackedSystem;
use crate::random;

/// Condition number of the prescribed covariance above which the design
/// carries a warning.
const PRESCRIBED_CONDITION_WARNING: f64 = 1e10;

/// The affine family of feasible noise precisions for one prescribed
/// confusion covariance.
#[derive(Debug, Clone)]
pub struct SolutionFamily {
    /// pK x pK orthogonal projector onto range(O): `O Wo⁻¹ Oᵀ`.
    pub projector: DMatrix<f64>,
    /// n x pK whitened gain: `Sigma_v^{-1/2} Wo⁻¹ Oᵀ`.
    pub whitened_gain: DMatrix<f64>,
}

impl SolutionFamily {
    /// Build the family for an observable stacked system and SPD `sigma_v`.
    pub fn build(stacked: &StackedSystem, sigma_v: &DMatrix<f64>) -> Result<Self> {
        stacked.require_observable()?;
        validate_prescribed(stacked, sigma_v)?;
        let inv_sqrt_sv = linalg::spd_inv_sqrt(sigma_v, "Sigma_v")?;
        let wo_inv = linalg::spd_inverse(&stacked.gramian, "observability gramian")?;
        let projector = linalg::symmetrize(&(&stacked.obs * &wo_inv * stacked.obs.transpose()));
        let whitened_gain = inv_sqrt_sv * wo_inv * stacked.obs.transpose();
        Ok(Self {
            projector,
            whitened_gain,
        })
    }

    pub fn stacked_dim(&self) -> usize {
        self.projector.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.whitened_gain.nrows()
    }

    /// The member at `R = 0`: `NᵀN`.
    pub fn base_precision(&self) -> DMatrix<f64> {
        self.whitened_gain.transpose() * &self.whitened_gain
    }

    /// Family member `NᵀN + R - M R M` for a symmetric offset `R`.
    ///
    /// Every member satisfies `Oᵀ X O = Sigma_v⁻¹` regardless of `R`; only
    /// the action off the range of `O` changes.
    pub fn member(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        let r = linalg::symmetrize(r);
        let m = &self.projector;
        linalg::symmetrize(&(self.base_precision() + &r - m * r * m))
    }

    /// Certificate that some member is positive definite: every eigenvector
    /// of the projector at eigenvalue 1 must be visible to the whitened
    /// gain, i.e. the stacked matrix `[M - I; N]` has full column rank.
    pub fn detectable(&self) -> bool {
        let pk = self.stacked_dim();
        let n = self.state_dim();
        let mut stacked = DMatrix::zeros(pk + n, pk);
        stacked
            .view_mut((0, 0), (pk, pk))
            .copy_from(&(&self.projector - DMatrix::identity(pk, pk)));
        stacked
            .view_mut((pk, 0), (n, pk))
            .copy_from(&self.whitened_gain);
        linalg::numerical_rank(&stacked).rank == pk
    }
}

/// A synthesized noise covariance with its optimality certificates.
#[derive(Debug, Clone)]
pub struct NoiseDesign {
    /// pK x pK output-noise covariance.
    pub sigma: DMatrix<f64>,
    /// Its inverse, the noise precision X.
    pub precision: DMatrix<f64>,
    /// Optimal surrogate level: λ_min of every achievable precision.
    pub beta_opt: f64,
    /// Optimal distortion bound pK·λ_max(Sigma_v·Wo) = pK/beta_opt.
    pub eps_opt: f64,
    /// Free eigenvalue used on the complement of range(O).
    pub c_free: f64,
    /// Adversary covariance actually achieved, `(OᵀSigma⁻¹O)⁻¹`.
    pub achieved_confusion: DMatrix<f64>,
    /// Relative Frobenius error between achieved and prescribed confusion.
    pub residual: f64,
    /// tr Sigma, the output distortion of this design.
    pub trace: f64,
    pub warnings: Vec<String>,
}

/// Synthesize the distortion-optimal noise covariance for a prescribed
/// confusion covariance.
///
/// `c_free` defaults to the optimal level `beta_opt`; any larger value keeps
/// the confusion equality while strictly reducing tr Sigma, at the cost of
/// λ_min(X) no longer sitting at the certificate value.
pub fn design_optimal(
    stacked: &StackedSystem,
    sigma_v: &DMatrix<f64>,
    c_free: Option<f64>,
) -> Result<NoiseDesign> {
    let family = SolutionFamily::build(stacked, sigma_v)?;
    let pk = family.stacked_dim();
    let n = family.state_dim();

    let mut warnings = Vec::new();
    let sv_cond = linalg::condition_sym(sigma_v);
    if sv_cond > PRESCRIBED_CONDITION_WARNING {
        warnings.push(format!(
            "prescribed covariance condition number {sv_cond:.3e} exceeds {PRESCRIBED_CONDITION_WARNING:.0e}"
        ));
    }

    // beta_opt = λ_min(Sigma_v⁻¹ Wo⁻¹) through the symmetric form N Nᵀ.
    let nnt = linalg::symmetrize(&(&family.whitened_gain * family.whitened_gain.transpose()));
    let beta_opt = linalg::min_eigenvalue_sym(&nnt);
    if !(beta_opt > 0.0) {
        return Err(Error::Infeasible(format!(
            "whitened gramian has nonpositive eigenvalue {beta_opt:.3e}"
        )));
    }
    let c_free = c_free.unwrap_or(beta_opt);
    if c_free < beta_opt * (1.0 - 1e-9) {
        return Err(Error::InvalidInput(format!(
            "c_free = {c_free:.6e} is below the optimal level {beta_opt:.6e}; \
             smaller values only worsen the distortion bound"
        )));
    }

    // eps_opt = pK·λ_max(Sigma_v Wo), evaluated on the symmetric similarity
    // sqrt(Sigma_v)·Wo·sqrt(Sigma_v).
    let sqrt_sv = linalg::spd_sqrt(sigma_v, "Sigma_v")?;
    let eps_opt =
        pk as f64 * linalg::max_eigenvalue_sym(&(&sqrt_sv * &stacked.gramian * &sqrt_sv));

    // Split the projector eigenbasis: the n leading eigenvectors span
    // range(O), the rest its complement.
    let meig = linalg::symmetric_eigen_sorted(&family.projector);
    let range_basis = meig.vectors.columns(0, n).into_owned();
    let kernel_basis = meig.vectors.columns(n, pk - n).into_owned();

    // Diagonalize NᵀN on the range block: G = (N S1)ᵀ (N S1).
    let ns1 = &family.whitened_gain * &range_basis;
    let g = linalg::symmetrize(&(ns1.transpose() * &ns1));
    let geig = linalg::symmetric_eigen_sorted(&g);
    if geig.values[n - 1] <= 0.0 {
        return Err(Error::Infeasible(format!(
            "range-block eigenvalue {:.3e} is nonpositive",
            geig.values[n - 1]
        )));
    }
    let u1 = &range_basis * &geig.vectors;

    let inv_values = DVector::from_iterator(n, geig.values.iter().map(|&v| 1.0 / v));
    let kernel_proj = &kernel_basis * kernel_basis.transpose();
    let precision = linalg::symmetrize(
        &(&u1 * DMatrix::from_diagonal(&geig.values) * u1.transpose() + c_free * &kernel_proj),
    );
    let sigma = linalg::symmetrize(
        &(&u1 * DMatrix::from_diagonal(&inv_values) * u1.transpose()
            + (1.0 / c_free) * &kernel_proj),
    );

    let mut achieved_confusion = crate::estimation::confusion_covariance(stacked, &sigma)?;
    let mut residual = linalg::rel_frobenius(&achieved_confusion, sigma_v);

    // Badly conditioned gramians (fast unstable modes over long horizons)
    // leave a first-order construction error; Newton corrections through the
    // confusion map remove it without leaving the solution family by more
    // than the error itself.
    let mut precision = precision;
    let mut sigma = sigma;
    let mut refined = false;
    for _ in 0..3 {
        if residual <= 1e-12 {
            break;
        }
        let chol = linalg::cholesky_spd(&sigma, "Sigma")?;
        let white = chol.solve(&stacked.obs);
        let p = &white * &achieved_confusion;
        let ptp = linalg::symmetrize(&(p.transpose() * &p));
        let s = linalg::cholesky_spd(&ptp, "refinement normal matrix")?.solve(&p.transpose());
        let defect = sigma_v - &achieved_confusion;
        let candidate = linalg::symmetrize(&(&sigma + s.transpose() * defect * &s));
        let candidate_confusion = crate::estimation::confusion_covariance(stacked, &candidate)?;
        let new_residual = linalg::rel_frobenius(&candidate_confusion, sigma_v);
        if new_residual >= residual {
            break;
        }
        sigma = candidate;
        achieved_confusion = candidate_confusion;
        residual = new_residual;
        refined = true;
    }
    if refined {
        precision = linalg::spd_inverse(&sigma, "Sigma")?;
    }
    let trace = sigma.trace();

    Ok(NoiseDesign {
        sigma,
        precision,
        beta_opt,
        eps_opt,
        c_free,
        achieved_confusion,
        residual,
        trace,
        warnings,
    })
}

/// Result of the randomized optimality probe.
#[derive(Debug, Clone)]
pub struct BetaProbe {
    pub trials: usize,
    /// Largest λ_min(X) observed over random family members.
    pub max_min_eigenvalue: f64,
    /// The certificate level the probe tries to beat.
    pub bound: f64,
}

impl BetaProbe {
    /// True when no random member exceeded the certificate.
    pub fn certified(&self, tol: f64) -> bool {
        self.max_min_eigenvalue <= self.bound + tol
    }
}

/// Try `trials` random symmetric offsets and record the best λ_min(X) seen.
/// No member can exceed `beta_opt`, so the probe is a randomized check of
/// the optimality certificate.
pub fn probe_beta_optimality(
    family: &SolutionFamily,
    beta_opt: f64,
    trials: usize,
    seed: u64,
) -> BetaProbe {
    let pk = family.stacked_dim();
    let mut rng = random::master_rng(seed);
    let mut max_min = f64::NEG_INFINITY;
    for _ in 0..trials {
        let g = random::standard_normal_matrix(&mut rng, pk, pk);
        let member = family.member(&linalg::symmetrize(&g));
        max_min = max_min.max(linalg::min_eigenvalue_sym(&member));
    }
    BetaProbe {
        trials,
        max_min_eigenvalue: max_min,
        bound: beta_opt,
    }
}

fn validate_prescribed(stacked: &StackedSystem, sigma_v: &DMatrix<f64>) -> Result<()> {
    let n = stacked.state_dim();
    if sigma_v.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "prescribed covariance is {}x{}, expected {n}x{n}",
            sigma_v.nrows(),
            sigma_v.ncols()
        )));
    }
    linalg::check_finite_matrix(sigma_v, "Sigma_v")?;
    Ok(())
}
