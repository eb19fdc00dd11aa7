//! Comparison mechanisms: entropy-optimal and isotropic noise.
//!
//! The entropy baseline spends a fixed output-distortion budget
//! `tr Sigma <= eps_p` to maximize the differential entropy of the
//! adversary's confusion set, i.e. maximizes
//! `g(Sigma) = -log det(Oᵀ Sigma⁻¹ O)` by projected gradient ascent on the
//! SPD trace ball. The isotropic baseline adds white noise `sigma·I`, the
//! shape differential-privacy calibrations produce; its confusion set is
//! `sigma·Wo⁻¹`, fixed by the gramian regardless of budget.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimation;
use crate::linalg;
use crate::lti::StackedSystem;
use crate::montecarlo;

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
/// Eigenvalue floor factor: eigenvalues below `floor·tr/pK` are pinned.
const EIGEN_FLOOR: f64 = 1e-10;

/// Entropy-optimal noise design under a trace budget.
#[derive(Debug, Clone)]
pub struct EntropyDesign {
    /// pK x pK noise covariance, trace equal to the budget.
    pub sigma: DMatrix<f64>,
    /// The budget tr Sigma <= eps_p.
    pub eps_p: f64,
    /// log2 det of the achieved confusion covariance.
    pub objective_bits: f64,
    /// Relative stationarity residual on the free eigenspace.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Maximize the confusion-set entropy under `tr Sigma <= eps_p`.
///
/// Noise in the complement of range(O) never reaches the adversary, so the
/// optimum floors it; noise missing from any direction the initial state
/// excites hands the adversary a clean output combination and sends the
/// objective to minus infinity. The ascent therefore runs on the range
/// block, where it is well conditioned, with the complement held at the
/// floor. A full-space ascent is unusable here: gradients on floored
/// directions scale with the inverse square of the floor.
pub fn design_entropy(
    stacked: &StackedSystem,
    eps_p: f64,
    max_iter: usize,
    tol: f64,
) -> Result<EntropyDesign> {
    if !(eps_p > 0.0) {
        return Err(Error::InvalidInput(format!(
            "performance budget must be positive, got {eps_p}"
        )));
    }
    if max_iter == 0 {
        return Err(Error::InvalidInput(
            "iteration budget must be positive".into(),
        ));
    }
    stacked.require_observable()?;
    let pk = stacked.stacked_dim();
    let n = stacked.state_dim();

    // Output-space split: leading eigenvectors of O·Oᵀ span what the
    // initial state excites, the rest its complement.
    let outer = linalg::symmetrize(&(&stacked.obs * stacked.obs.transpose()));
    let eig = linalg::symmetric_eigen_sorted(&outer);
    let range_basis = eig.vectors.columns(0, n).into_owned();
    let obs_range = range_basis.transpose() * &stacked.obs;

    // Ascend at the normalized budget n so the unit trial step is sane at
    // any physical scale; scaling the optimum onto eps_p afterwards shifts
    // the objective by an exact constant.
    let budget = n as f64;
    let mut s = DMatrix::identity(n, n) * (budget / pk as f64);
    let mut g = objective_with(&obs_range, &s)?;
    let mut iterations = 0;
    let mut kkt = f64::INFINITY;
    let mut converged = false;

    for _ in 0..max_iter {
        let grad = gradient_with(&obs_range, &s)?;
        kkt = stationarity_residual(&s, &grad, budget);
        if kkt <= tol {
            converged = true;
            break;
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let candidate = project_trace_ball(&(&s + alpha * &grad), budget);
            if let Ok(gc) = objective_with(&obs_range, &candidate) {
                let inner = grad.dot(&(&candidate - &s));
                if gc >= g + ARMIJO_C1 * inner.max(0.0) && gc > g {
                    s = candidate;
                    g = gc;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // No ascent direction survives projection: stationary.
            let grad = gradient_with(&obs_range, &s)?;
            kkt = stationarity_residual(&s, &grad, budget);
            converged = kkt <= tol;
            break;
        }
    }

    // Assemble the physical covariance: spend the budget on the range
    // block, keep the complement at the floor, then land exactly on the
    // budget (inflating Sigma only ever helps the objective).
    let floor = EIGEN_FLOOR * eps_p / pk as f64;
    let range_budget = eps_p - (pk - n) as f64 * floor;
    let s_phys = &s * (range_budget / s.trace());
    let kernel_basis = eig.vectors.columns(n, pk - n);
    let mut sigma = linalg::symmetrize(
        &(&range_basis * s_phys * range_basis.transpose()
            + floor * &kernel_basis * kernel_basis.transpose()),
    );
    sigma *= eps_p / sigma.trace();
    let info = information(stacked, &sigma)?;
    let objective_bits = -log_det_spd(&info)? / std::f64::consts::LN_2;

    Ok(EntropyDesign {
        sigma,
        eps_p,
        objective_bits,
        kkt_residual: kkt,
        iterations,
        converged,
    })
}

fn info_with(obs: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = linalg::cholesky_spd(sigma, "Sigma")?;
    let white = chol.solve(obs);
    Ok(linalg::symmetrize(&(obs.transpose() * white)))
}

/// `Oᵀ Sigma⁻¹ O`.
fn information(stacked: &StackedSystem, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    info_with(&stacked.obs, sigma)
}

fn objective_with(obs: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    Ok(-log_det_spd(&info_with(obs, sigma)?)?)
}

/// `g(Sigma) = -ln det(Oᵀ Sigma⁻¹ O)`.
#[cfg(test)]
fn objective(stacked: &StackedSystem, sigma: &DMatrix<f64>) -> Result<f64> {
    objective_with(&stacked.obs, sigma)
}

fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = linalg::cholesky_spd(m, "log-det argument")?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        acc += l[(i, i)].ln();
    }
    Ok(2.0 * acc)
}

fn gradient_with(obs: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = linalg::cholesky_spd(sigma, "Sigma")?;
    let white = chol.solve(obs);
    let info = linalg::symmetrize(&(obs.transpose() * &white));
    let info_chol = linalg::cholesky_spd(&info, "information matrix")?;
    let half = info_chol.solve(&white.transpose());
    Ok(linalg::symmetrize(&(white * half)))
}

/// Ascent direction `∇g = Sigma⁻¹ O (OᵀSigma⁻¹O)⁻¹ Oᵀ Sigma⁻¹`, a PSD matrix
/// of rank at most n.
#[cfg(test)]
fn gradient(stacked: &StackedSystem, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    gradient_with(&stacked.obs, sigma)
}

/// Euclidean projection onto the spectrally floored trace ball: shift every
/// eigenvalue down by a common water level, clamping at the floor, until
/// the budget holds. The shift is what retires useless directions; a plain
/// rescale would leave them decaying too slowly to ever pin.
fn project_trace_ball(m: &DMatrix<f64>, budget: f64) -> DMatrix<f64> {
    let eig = linalg::symmetric_eigen_sorted(m);
    let floor = EIGEN_FLOOR * budget / m.nrows() as f64;
    let floored: Vec<f64> = eig.values.iter().map(|&v| v.max(floor)).collect();
    let total: f64 = floored.iter().sum();
    let values = if total <= budget {
        DVector::from_vec(floored)
    } else {
        let mass = |tau: f64| -> f64 {
            eig.values.iter().map(|&v| (v - tau).max(floor)).sum()
        };
        let mut lo = 0.0;
        let mut hi = eig.values[0] - floor;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mass(mid) > budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        DVector::from_iterator(
            eig.values.len(),
            eig.values.iter().map(|&v| (v - hi).max(floor)),
        )
    };
    &eig.vectors * DMatrix::from_diagonal(&values) * eig.vectors.transpose()
}

/// Stationarity of the trace-constrained maximization, restricted to the
/// free eigenspace of `sigma` (eigenvalues above the floor): on it the
/// gradient must be a multiple of the identity. The multiplier estimate is
/// `mu = tr(P ∇g P)/dim(P)`, which reduces to `tr(∇g)/pK` when nothing is
/// pinned.
fn stationarity_residual(sigma: &DMatrix<f64>, grad: &DMatrix<f64>, budget: f64) -> f64 {
    let pk = sigma.nrows();
    let floor = EIGEN_FLOOR * budget / pk as f64;
    let eig = linalg::symmetric_eigen_sorted(sigma);
    let free: Vec<usize> = (0..pk)
        .filter(|&i| eig.values[i] > floor * (1.0 + 1e-6))
        .collect();
    let gnorm = grad.norm();
    if free.is_empty() || gnorm == 0.0 {
        return 0.0;
    }
    let basis = DMatrix::from_columns(
        &free
            .iter()
            .map(|&i| eig.vectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    // Gradient in the free basis; stationarity means it equals mu·I there.
    // The denominator is the free-block norm: floored directions carry
    // multipliers of their own and must not dilute the measure.
    let reduced = basis.transpose() * grad * &basis;
    let mu = reduced.trace() / free.len() as f64;
    let dev = &reduced - DMatrix::identity(free.len(), free.len()) * mu;
    dev.norm() / reduced.norm().max(f64::MIN_POSITIVE)
}

/// Differential entropy, in bits, of a Gaussian with the given covariance.
pub fn gaussian_entropy_bits(cov: &DMatrix<f64>) -> Result<f64> {
    let n = cov.nrows() as f64;
    let log2_det = log_det_spd(cov)? / std::f64::consts::LN_2;
    Ok(0.5 * log2_det + 0.5 * n * (1.0 + (2.0 * std::f64::consts::PI).log2()))
}

/// Isotropic white-noise design `Sigma = sigma·I`.
#[derive(Debug, Clone)]
pub struct IsotropicDesign {
    pub sigma_scalar: f64,
    pub sigma: DMatrix<f64>,
    /// Adversary covariance `sigma·Wo⁻¹`: its shape never depends on the
    /// noise level.
    pub confusion: DMatrix<f64>,
}

pub fn design_isotropic(stacked: &StackedSystem, sigma: f64) -> Result<IsotropicDesign> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput(format!(
            "noise level must be positive, got {sigma}"
        )));
    }
    stacked.require_observable()?;
    let wo_inv = linalg::spd_inverse(&stacked.gramian, "observability gramian")?;
    Ok(IsotropicDesign {
        sigma_scalar: sigma,
        sigma: DMatrix::identity(stacked.stacked_dim(), stacked.stacked_dim()) * sigma,
        confusion: wo_inv * sigma,
    })
}

/// How two confusion ellipsoids relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Containment {
    /// First ellipsoid inside the second (first covariance ⪯ second).
    FirstWithinSecond,
    SecondWithinFirst,
    /// Difference indefinite: each mechanism hides more in some direction.
    Incomparable,
    Equal,
}

/// Pairwise confusion-set comparison between two designs.
#[derive(Debug, Clone)]
pub struct PairDiagnostic {
    pub first: String,
    pub second: String,
    /// Eigenvalues of confusion(first) - confusion(second), descending.
    pub difference_eigenvalues: Vec<f64>,
    pub containment: Containment,
}

/// One mechanism's row in a comparison.
#[derive(Debug, Clone)]
pub struct ComparisonEntry {
    pub name: String,
    pub trace: f64,
    pub confusion: DMatrix<f64>,
    /// log2 det of the confusion covariance.
    pub log_det_confusion_bits: f64,
    /// λ_min of the noise precision Sigma⁻¹, the quantity the optimal
    /// design certifies.
    pub min_precision_eigenvalue: f64,
    /// Extent of the confusion ellipsoid along each coordinate axis at the
    /// report's gamma: sqrt(gamma·cov_ii).
    pub semi_axes: Vec<f64>,
}

/// Side-by-side mechanism comparison on one system and horizon.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub gamma: f64,
    pub entries: Vec<ComparisonEntry>,
    pub pairs: Vec<PairDiagnostic>,
}

/// Compare noise covariances (name, Sigma) through the adversary they all
/// face. Pairwise diagnostics report the eigenvalues of confusion-matrix
/// differences; indefinite differences mean neither mechanism dominates.
pub fn compare_mechanisms(
    designs: &[(String, DMatrix<f64>)],
    stacked: &StackedSystem,
    gamma: f64,
) -> Result<ComparisonReport> {
    if designs.is_empty() {
        return Err(Error::InvalidInput("no designs to compare".into()));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidInput(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    let mut entries = Vec::with_capacity(designs.len());
    for (name, sigma) in designs {
        let confusion = estimation::confusion_covariance(stacked, sigma)?;
        let log_det_confusion_bits = log_det_spd(&confusion)? / std::f64::consts::LN_2;
        let precision = linalg::spd_inverse(sigma, "Sigma")?;
        let semi_axes = (0..confusion.nrows())
            .map(|i| (gamma * confusion[(i, i)]).sqrt())
            .collect();
        entries.push(ComparisonEntry {
            name: name.clone(),
            trace: sigma.trace(),
            confusion,
            log_det_confusion_bits,
            min_precision_eigenvalue: linalg::min_eigenvalue_sym(&precision),
            semi_axes,
        });
    }
    let mut pairs = Vec::new();
    for i in 0..entries.len() {
        for j in (i + 1)..entries.len() {
            let diff = &entries[i].confusion - &entries[j].confusion;
            let eig = linalg::symmetric_eigen_sorted(&diff);
            let scale = entries[i].confusion.norm().max(entries[j].confusion.norm());
            let tol = 1e-9 * scale.max(1.0);
            let max = eig.values[0];
            let min = eig.values[eig.values.len() - 1];
            let containment = if max <= tol && min >= -tol {
                Containment::Equal
            } else if max <= tol {
                Containment::FirstWithinSecond
            } else if min >= -tol {
                Containment::SecondWithinFirst
            } else {
                Containment::Incomparable
            };
            pairs.push(PairDiagnostic {
                first: entries[i].name.clone(),
                second: entries[j].name.clone(),
                difference_eigenvalues: eig.values.iter().cloned().collect(),
                containment,
            });
        }
    }
    Ok(ComparisonReport {
        gamma,
        entries,
        pairs,
    })
}

/// Convenience: ellipse shadow of one entry's confusion set, for plotting.
pub fn entry_ellipse(
    entry: &ComparisonEntry,
    axes: (usize, usize),
    gamma: f64,
    points: usize,
) -> Result<montecarlo::PlaneEllipse> {
    montecarlo::project_ellipsoid(&entry.confusion, axes, gamma, points)
}
