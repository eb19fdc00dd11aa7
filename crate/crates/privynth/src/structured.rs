//! Block-diagonal noise covariance approximation.
//!
//! A block-diagonal `Sigma` adds uncorrelated noise per released time step,
//! which is cheaper to implement (stream one p-dimensional draw per step)
//! than a full pK-correlated mechanism. Exact confusion matching is then not
//! always feasible, so the design minimizes the mismatch
//! `f = ‖Oᵀ X O - Sigma_v⁻¹‖_F²` over block-diagonal precisions `X`, and,
//! when the mismatch reaches the tolerance, polishes the output distortion
//! `tr Sigma` along the feasible set by penalty continuation.
//!
//! Each precision block is parametrized as `X_k = L_k L_kᵀ` with a
//! lower-triangular `L_k` whose diagonal is stored in log space, so the SPD
//! constraint disappears and plain gradient descent with Armijo backtracking
//! applies.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::lti::StackedSystem;
use crate::mechanism;
use crate::montecarlo::NoiseSampler;
use crate::random;

/// Armijo sufficient-decrease constant.
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
/// Log-diagonal clamp; keeps the triangular factors invertible.
const THETA_DIAG_LIMIT: f64 = 45.0;

/// A per-step uncorrelated noise design.
#[derive(Debug, Clone)]
pub struct BlockDiagonalDesign {
    /// Covariance blocks Sigma_1..Sigma_K, one per released step.
    pub blocks: Vec<DMatrix<f64>>,
    /// Achieved mismatch `‖Oᵀ X O - Sigma_v⁻¹‖_F²`.
    pub e_blk: f64,
    /// tr Sigma, the output distortion.
    pub trace: f64,
    /// Gradient iterations spent (both phases).
    pub iterations: usize,
    /// True when e_blk reached the requested tolerance.
    pub converged: bool,
    /// Mismatch value at each accepted descent iterate; nonincreasing.
    pub history: Vec<f64>,
}

impl BlockDiagonalDesign {
    /// Assembled pK x pK block-diagonal covariance.
    pub fn full_sigma(&self) -> DMatrix<f64> {
        let p = self.blocks[0].nrows();
        let pk = p * self.blocks.len();
        let mut out = DMatrix::zeros(pk, pk);
        for (k, b) in self.blocks.iter().enumerate() {
            out.view_mut((k * p, k * p), (p, p)).copy_from(b);
        }
        out
    }
}

/// Design a block-diagonal covariance approximating the prescribed confusion
/// covariance. `max_iter` bounds the gradient iterations of each phase; the
/// design converged when `e_blk <= tol`.
pub fn design_block_diagonal(
    stacked: &StackedSystem,
    sigma_v: &DMatrix<f64>,
    max_iter: usize,
    tol: f64,
) -> Result<BlockDiagonalDesign> {
    if max_iter == 0 {
        return Err(Error::InvalidInput(
            "iteration budget must be positive".into(),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    stacked.require_observable()?;

    // Warm start: diagonal blocks of the unstructured optimal precision.
    // They are SPD (principal blocks of an SPD matrix) and already carry the
    // right scale.
    let unstructured = mechanism::design_optimal(stacked, sigma_v, None)?;
    let p = stacked.output_dim();
    let k = stacked.horizon;
    let problem = Problem::new(stacked, sigma_v)?;
    let mut thetas: Vec<DMatrix<f64>> = (0..k)
        .map(|i| {
            let block = unstructured
                .precision
                .view((i * p, i * p), (p, p))
                .into_owned();
            let l = linalg::cholesky_spd(&block, "warm-start block")
                .expect("principal block of an SPD matrix is SPD")
                .l();
            theta_from_l(&l)
        })
        .collect();

    // Phase 1: drive the mismatch down. Aim below tol so the trace polish
    // has feasibility margin.
    let phase1_target = tol * 1e-2;
    let mut history = Vec::new();
    let mut iterations = 0usize;
    history.push(problem.mismatch(&thetas));
    let used = descend(
        &mut thetas,
        max_iter,
        phase1_target,
        |t| problem.mismatch(t),
        |t| problem.mismatch_grad(t),
        Some(&mut history),
    );
    iterations += used;

    let mut best_thetas = thetas.clone();
    let mut best_f = problem.mismatch(&best_thetas);
    let mut best_trace = problem.trace(&best_thetas);

    // Phase 2: when feasible, walk toward lower tr Sigma under a mismatch
    // penalty that tightens across stages, restoring feasibility between
    // stages and keeping the best iterate that meets the tolerance. Skipped
    // when the parameter count does not exceed the constraint count: the
    // feasible set is then generically a single point and polishing could
    // only wander inside the tolerance ball.
    let n = stacked.state_dim();
    let has_trace_freedom = k * (p * (p + 1)) / 2 > n * (n + 1) / 2;
    if best_f <= tol && has_trace_freedom {
        let stage_budget = (max_iter / 6).max(50);
        let trace_scale = best_trace.abs().max(1.0);
        let mut c = trace_scale;
        for _ in 0..6 {
            let track = &mut |t: &Vec<DMatrix<f64>>| {
                let f = problem.mismatch(t);
                if f <= tol {
                    let tr = problem.trace(t);
                    if tr < best_trace {
                        best_trace = tr;
                        best_f = f;
                        best_thetas = t.clone();
                    }
                }
            };
            let used = descend_tracked(
                &mut thetas,
                stage_budget,
                f64::NEG_INFINITY,
                |t| problem.trace(t) + c * problem.mismatch(t),
                |t| problem.penalty_grad(t, c),
                track,
            );
            iterations += used;
            let drifted = problem.mismatch(&thetas);
            // Restore feasibility before the next stage.
            let used = descend(
                &mut thetas,
                stage_budget / 2 + 1,
                phase1_target,
                |t| problem.mismatch(t),
                |t| problem.mismatch_grad(t),
                None,
            );
            iterations += used;
            let f = problem.mismatch(&thetas);
            if f <= tol {
                let tr = problem.trace(&thetas);
                if tr < best_trace {
                    best_trace = tr;
                    best_f = f;
                    best_thetas = thetas.clone();
                }
            }
            // Tighten faster while the penalty still lets the mismatch
            // escape the tolerance.
            c *= if drifted > tol { 10.0 } else { 4.0 };
        }
    }

    // Sigma_k = (L Lᵀ)⁻¹ = L⁻ᵀ L⁻¹ via triangular solves; the clamped
    // log-diagonal keeps L invertible.
    let blocks: Vec<DMatrix<f64>> = best_thetas
        .iter()
        .map(|t| {
            let l = l_from_theta(t);
            let linv = l
                .clone()
                .solve_lower_triangular(&DMatrix::identity(p, p))
                .expect("triangular factor has positive diagonal");
            linalg::symmetrize(&(linv.transpose() * &linv))
        })
        .collect();
    Ok(BlockDiagonalDesign {
        blocks,
        e_blk: best_f,
        trace: best_trace,
        iterations,
        converged: best_f <= tol,
        history,
    })
}

/// One stacked draw of per-step uncorrelated noise: K independent Gaussian
/// blocks with covariances Sigma_1..Sigma_K.
pub fn sample_block_noise(design: &BlockDiagonalDesign, seed: u64) -> Result<DVector<f64>> {
    let p = design.blocks[0].nrows();
    let mut rng = random::master_rng(seed);
    let mut out = DVector::zeros(p * design.blocks.len());
    for (k, block) in design.blocks.iter().enumerate() {
        let sampler = NoiseSampler::new(block)?;
        out.rows_mut(k * p, p).copy_from(&sampler.sample(&mut rng));
    }
    Ok(out)
}

/// The mismatch/trace objective data: per-step observability blocks and the
/// prescribed precision.
struct Problem {
    obs_blocks: Vec<DMatrix<f64>>,
    sv_inv: DMatrix<f64>,
}

impl Problem {
    fn new(stacked: &StackedSystem, sigma_v: &DMatrix<f64>) -> Result<Self> {
        let n = stacked.state_dim();
        if sigma_v.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "prescribed covariance is {}x{}, expected {n}x{n}",
                sigma_v.nrows(),
                sigma_v.ncols()
            )));
        }
        let sv_inv = linalg::spd_inverse(sigma_v, "Sigma_v")?;
        let p = stacked.output_dim();
        let obs_blocks = (0..stacked.horizon)
            .map(|k| stacked.obs.view((k * p, 0), (p, n)).into_owned())
            .collect();
        Ok(Self { obs_blocks, sv_inv })
    }

    fn factors(&self, thetas: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        thetas.iter().map(l_from_theta).collect()
    }

    /// E = Σ_k O_kᵀ X_k O_k - Sigma_v⁻¹.
    fn residual(&self, thetas: &[DMatrix<f64>]) -> DMatrix<f64> {
        let n = self.sv_inv.nrows();
        let mut acc = DMatrix::zeros(n, n);
        for (l, ok) in self.factors(thetas).iter().zip(&self.obs_blocks) {
            let lok = l.transpose() * ok;
            acc += lok.transpose() * lok;
        }
        linalg::symmetrize(&(acc - &self.sv_inv))
    }

    fn mismatch(&self, thetas: &[DMatrix<f64>]) -> f64 {
        self.residual(thetas).norm_squared()
    }

    fn mismatch_grad(&self, thetas: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        let e = self.residual(thetas);
        thetas
            .iter()
            .zip(&self.obs_blocks)
            .map(|(theta, ok)| {
                let l = l_from_theta(theta);
                let g = 4.0 * ok * &e * ok.transpose() * &l;
                mask_to_theta(&g, &l)
            })
            .collect()
    }

    /// tr Sigma = Σ_k tr(X_k⁻¹).
    fn trace(&self, thetas: &[DMatrix<f64>]) -> f64 {
        self.factors(thetas)
            .iter()
            .map(|l| {
                let p = l.nrows();
                let linv = l
                    .clone()
                    .solve_lower_triangular(&DMatrix::identity(p, p))
                    .expect("triangular factor has positive diagonal");
                linv.norm_squared()
            })
            .sum()
    }

    fn trace_grad(&self, thetas: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        thetas
            .iter()
            .map(|theta| {
                let l = l_from_theta(theta);
                let p = l.nrows();
                let linv = l
                    .clone()
                    .solve_lower_triangular(&DMatrix::identity(p, p))
                    .expect("triangular factor has positive diagonal");
                let x_inv = linalg::symmetrize(&(linv.transpose() * &linv));
                let g = -2.0 * &x_inv * &x_inv * &l;
                mask_to_theta(&g, &l)
            })
            .collect()
    }

    fn penalty_grad(&self, thetas: &[DMatrix<f64>], c: f64) -> Vec<DMatrix<f64>> {
        let mut g = self.trace_grad(thetas);
        for (gi, fi) in g.iter_mut().zip(self.mismatch_grad(thetas)) {
            *gi += c * fi;
        }
        g
    }
}

/// theta layout: strict lower triangle holds L entries, diagonal holds ln(L_ii).
fn theta_from_l(l: &DMatrix<f64>) -> DMatrix<f64> {
    let mut t = l.lower_triangle();
    for i in 0..t.nrows() {
        t[(i, i)] = l[(i, i)].ln();
    }
    t
}

fn l_from_theta(theta: &DMatrix<f64>) -> DMatrix<f64> {
    let mut l = theta.lower_triangle();
    for i in 0..l.nrows() {
        l[(i, i)] = theta[(i, i)].clamp(-THETA_DIAG_LIMIT, THETA_DIAG_LIMIT).exp();
    }
    l
}

/// Project a raw dL gradient to theta space: keep the lower triangle, chain
/// the diagonal through the log parametrization.
fn mask_to_theta(raw: &DMatrix<f64>, l: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = raw.lower_triangle();
    for i in 0..g.nrows() {
        g[(i, i)] = raw[(i, i)] * l[(i, i)];
    }
    g
}

fn dot(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn axpy(out: &mut [DMatrix<f64>], alpha: f64, dir: &[DMatrix<f64>]) {
    for (o, d) in out.iter_mut().zip(dir) {
        *o += alpha * d;
    }
}

/// Armijo gradient descent with an adaptive initial step. Returns the number
/// of accepted iterations; `history`, when given, records the objective at
/// the start and after every accepted step.
fn descend(
    thetas: &mut Vec<DMatrix<f64>>,
    max_iter: usize,
    target: f64,
    value: impl Fn(&Vec<DMatrix<f64>>) -> f64,
    grad: impl Fn(&Vec<DMatrix<f64>>) -> Vec<DMatrix<f64>>,
    mut history: Option<&mut Vec<f64>>,
) -> usize {
    let mut noop = |_: &Vec<DMatrix<f64>>| {};
    let track: &mut dyn FnMut(&Vec<DMatrix<f64>>) = &mut noop;
    descend_impl(thetas, max_iter, target, value, grad, &mut history, track)
}

/// Variant that calls `track` on every accepted iterate (used by the
/// penalty phase to harvest feasible points along the way).
fn descend_tracked(
    thetas: &mut Vec<DMatrix<f64>>,
    max_iter: usize,
    target: f64,
    value: impl Fn(&Vec<DMatrix<f64>>) -> f64,
    grad: impl Fn(&Vec<DMatrix<f64>>) -> Vec<DMatrix<f64>>,
    track: &mut dyn FnMut(&Vec<DMatrix<f64>>),
) -> usize {
    let mut history = None;
    descend_impl(thetas, max_iter, target, value, grad, &mut history, track)
}

#[allow(clippy::too_many_arguments)]
fn descend_impl(
    thetas: &mut Vec<DMatrix<f64>>,
    max_iter: usize,
    target: f64,
    value: impl Fn(&Vec<DMatrix<f64>>) -> f64,
    grad: impl Fn(&Vec<DMatrix<f64>>) -> Vec<DMatrix<f64>>,
    history: &mut Option<&mut Vec<f64>>,
    track: &mut dyn FnMut(&Vec<DMatrix<f64>>),
) -> usize {
    let mut f = value(thetas);
    let mut last_step = 1.0;
    let mut used = 0;
    // Last accepted point and its gradient, for the Barzilai-Borwein step.
    let mut prev: Option<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> = None;
    for _ in 0..max_iter {
        if f <= target {
            break;
        }
        let g = grad(thetas);
        let gnorm2 = dot(&g, &g);
        if gnorm2 <= 1e-300 {
            break;
        }
        // Trial step: Barzilai-Borwein when the last move supports it (fast
        // on ill-conditioned valleys), otherwise grow the last accepted
        // step. Armijo backtracking below keeps descent monotone either way.
        let mut alpha = match &prev {
            Some((pt, pg)) => {
                let s: Vec<DMatrix<f64>> = thetas.iter().zip(pt).map(|(a, b)| a - b).collect();
                let y: Vec<DMatrix<f64>> = g.iter().zip(pg).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 0.0 {
                    dot(&s, &s) / sy
                } else {
                    last_step * 2.0
                }
            }
            None => last_step * 2.0,
        };
        if !alpha.is_finite() || alpha <= 0.0 {
            alpha = 1.0;
        }
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let mut candidate = thetas.clone();
            axpy(&mut candidate, -alpha, &g);
            let fc = value(&candidate);
            if fc <= f - ARMIJO_C1 * alpha * gnorm2 {
                prev = Some((std::mem::replace(thetas, candidate), g));
                f = fc;
                last_step = alpha;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        used += 1;
        if let Some(h) = history.as_deref_mut() {
            h.push(f);
        }
        track(thetas);
    }
    used
}
