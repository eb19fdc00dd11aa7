//! Empirical validation of noise mechanisms.
//!
//! Samples correlated Gaussian output noise, runs the GLS adversary per
//! trial, and reports the empirical estimate covariance, bias, and
//! confidence-ellipsoid coverage against the analytic predictions.
//!
//! Determinism contract: results depend only on the seed, never on thread
//! count or scheduling. Each trial draws from its own counter-indexed stream,
//! and aggregation folds fixed-size trial blocks in block order.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::estimation;
use crate::linalg;
use crate::lti::LtiSystem;
use crate::random;

/// Trials per aggregation block. Fixed so that partial sums fold in the same
/// order regardless of how blocks are distributed over threads.
const BLOCK: usize = 1024;

/// Gaussian sampler for a fixed covariance: `factor · z` with iid standard
/// normal `z` has the requested covariance.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    factor: DMatrix<f64>,
}

impl NoiseSampler {
    /// Factorize a covariance for sampling. Cholesky when SPD; on
    /// near-semidefinite inputs, an eigendecomposition with negative
    /// eigenvalues floored at zero. Genuinely indefinite inputs are rejected.
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() != sigma.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "covariance is {}x{}, expected square",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        linalg::check_finite_matrix(sigma, "Sigma")?;
        if let Ok(chol) = linalg::cholesky_spd(sigma, "Sigma") {
            return Ok(Self { factor: chol.l() });
        }
        let eig = linalg::symmetric_eigen_sorted(sigma);
        let max = eig.values[0].max(0.0);
        if eig.values[eig.values.len() - 1] < -1e-8 * max.max(1.0) {
            return Err(Error::NotPositiveDefinite("Sigma".into()));
        }
        let sqrt = DVector::from_iterator(
            eig.values.len(),
            eig.values.iter().map(|&v| v.max(0.0).sqrt()),
        );
        Ok(Self {
            factor: &eig.vectors * DMatrix::from_diagonal(&sqrt),
        })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> DVector<f64> {
        &self.factor * random::standard_normal_vector(rng, self.factor.ncols())
    }
}

/// `count` iid zero-mean Gaussian rows with the given covariance.
pub fn sample_mechanism_noise(
    sigma: &DMatrix<f64>,
    count: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if count == 0 {
        return Err(Error::InvalidInput("sample count must be positive".into()));
    }
    let sampler = NoiseSampler::new(sigma)?;
    let mut rng = random::master_rng(seed);
    let mut out = DMatrix::zeros(count, sampler.dim());
    for i in 0..count {
        out.row_mut(i).copy_from(&sampler.sample(&mut rng).transpose());
    }
    Ok(out)
}

/// Chi-square upper quantile: the `gamma` with `P(chi2_dof <= gamma) = 1 - alpha`,
/// found by bisection on the CDF to 1e-9 absolute accuracy.
pub fn chi2_quantile(dof: usize, alpha: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidInput(
            "degrees of freedom must be positive".into(),
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let dist = ChiSquared::new(dof as f64)
        .map_err(|e| Error::InvalidInput(format!("chi-square setup: {e}")))?;
    let target = 1.0 - alpha;
    let mut lo = 0.0_f64;
    let mut hi = (dof as f64).max(1.0);
    while dist.cdf(hi) < target {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::InvalidInput(format!(
                "quantile bracket failed for alpha = {alpha}"
            )));
        }
    }
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if dist.cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Settings for an adversary Monte Carlo run.
#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub trials: usize,
    pub seed: u64,
    /// Ellipsoid level for the coverage count.
    pub gamma: f64,
    /// Confidence level the gamma was derived from, when applicable.
    pub alpha: Option<f64>,
    /// Covariance defining the coverage ellipsoid. Defaults to the analytic
    /// GLS covariance of the run's noise; pass the prescribed confusion
    /// covariance to score coverage against the designer's target.
    pub ellipsoid_cov: Option<DMatrix<f64>>,
}

/// Outcome of a Monte Carlo adversary run.
#[derive(Debug, Clone)]
pub struct CoverageReport {
    pub samples: usize,
    /// Sample covariance of the estimates around their sample mean.
    pub empirical_cov: DMatrix<f64>,
    /// Analytic GLS covariance `(OᵀSigma⁻¹O)⁻¹`.
    pub target_cov: DMatrix<f64>,
    pub rel_frobenius_error: f64,
    /// Fraction of trials with `(x̂0 - x0)ᵀ E⁻¹ (x̂0 - x0) <= gamma`, where E
    /// is the configured ellipsoid covariance (the analytic GLS covariance
    /// unless overridden).
    pub coverage_rate: f64,
    pub gamma: f64,
    pub alpha: Option<f64>,
    /// Norm of the mean estimation error; ~0 for the unbiased adversary.
    pub mean_bias_norm: f64,
    pub ill_conditioned: bool,
}

/// Run `trials` independent perturb-release-attack rounds and compare the
/// adversary's empirical behavior with the analytic model.
pub fn run_adversary_trials(
    system: &LtiSystem,
    horizon: usize,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    sigma: &DMatrix<f64>,
    cfg: &TrialConfig,
) -> Result<CoverageReport> {
    run_adversary_trials_threaded(system, horizon, x0, u, sigma, cfg, thread_budget())
}

/// Same as [`run_adversary_trials`] with an explicit worker count; results
/// are bit-identical for every `threads` value.
pub fn run_adversary_trials_threaded(
    system: &LtiSystem,
    horizon: usize,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    sigma: &DMatrix<f64>,
    cfg: &TrialConfig,
    threads: usize,
) -> Result<CoverageReport> {
    if cfg.trials == 0 {
        return Err(Error::InvalidInput("trial count must be positive".into()));
    }
    if !(cfg.gamma > 0.0) {
        return Err(Error::InvalidInput(format!(
            "gamma must be positive, got {}",
            cfg.gamma
        )));
    }
    let stacked = system.stack(horizon)?;
    let y_clean = system.simulate(x0, u, horizon)?;
    let gls = estimation::gls_gain(&stacked, sigma)?;
    let sampler = NoiseSampler::new(sigma)?;
    // Quadratic form of the coverage ellipsoid.
    let ellipsoid = cfg.ellipsoid_cov.as_ref().unwrap_or(&gls.cov);
    let ellipsoid_chol = linalg::cholesky_spd(ellipsoid, "ellipsoid covariance")?;
    let base = &y_clean - &stacked.toeplitz * u;

    let n = stacked.state_dim();
    let blocks = cfg.trials.div_ceil(BLOCK);
    let mut partials: Vec<BlockSum> = (0..blocks).map(|_| BlockSum::new(n)).collect();

    let workers = threads.clamp(1, blocks);
    let next = AtomicUsize::new(0);
    let run_block = |block: usize, out: &mut BlockSum| {
        let start = block * BLOCK;
        let end = (start + BLOCK).min(cfg.trials);
        for trial in start..end {
            let mut rng = random::trial_rng(cfg.seed, trial as u64);
            let noise = sampler.sample(&mut rng);
            let estimate = &gls.gain * (&base + noise);
            let err = estimate - x0;
            let whitened = ellipsoid_chol
                .l_dirty()
                .solve_lower_triangular(&err)
                .unwrap();
            if whitened.norm_squared() <= cfg.gamma {
                out.covered += 1;
            }
            out.sum += &err;
            out.outer.ger(1.0, &err, &err, 1.0);
        }
    };

    if workers == 1 {
        for (block, out) in partials.iter_mut().enumerate() {
            run_block(block, out);
        }
    } else {
        let results: Vec<(usize, BlockSum)> = std::thread::scope(|scope| {
            let mut handles = Vec::with_capacity(workers);
            for _ in 0..workers {
                let next = &next;
                let run_block = &run_block;
                handles.push(scope.spawn(move || {
                    let mut mine = Vec::new();
                    loop {
                        let block = next.fetch_add(1, Ordering::Relaxed);
                        if block >= blocks {
                            return mine;
                        }
                        let mut out = BlockSum::new(n);
                        run_block(block, &mut out);
                        mine.push((block, out));
                    }
                }));
            }
            handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
        });
        for (block, sum) in results {
            partials[block] = sum;
        }
    }

    // Fold in block order so the float sums are scheduling-independent.
    let mut sum = DVector::zeros(n);
    let mut outer = DMatrix::zeros(n, n);
    let mut covered = 0usize;
    for p in &partials {
        sum += &p.sum;
        outer += &p.outer;
        covered += p.covered;
    }

    let t = cfg.trials as f64;
    let mean = &sum / t;
    // Sample covariance around the sample mean.
    let centered = outer - t * &mean * mean.transpose();
    let empirical_cov = linalg::symmetrize(&(centered / (t - 1.0).max(1.0)));
    let rel = linalg::rel_frobenius(&empirical_cov, &gls.cov);

    Ok(CoverageReport {
        samples: cfg.trials,
        empirical_cov,
        target_cov: gls.cov.clone(),
        rel_frobenius_error: rel,
        coverage_rate: covered as f64 / t,
        gamma: cfg.gamma,
        alpha: cfg.alpha,
        mean_bias_norm: mean.norm(),
        ill_conditioned: gls.ill_conditioned(),
    })
}

struct BlockSum {
    sum: DVector<f64>,
    outer: DMatrix<f64>,
    covered: usize,
}

impl BlockSum {
    fn new(n: usize) -> Self {
        Self {
            sum: DVector::zeros(n),
            outer: DMatrix::zeros(n, n),
            covered: 0,
        }
    }
}

/// Worker cap: `PRIVYNTH_THREADS` when set, otherwise the machine's
/// available parallelism.
pub fn thread_budget() -> usize {
    if let Ok(raw) = std::env::var("PRIVYNTH_THREADS") {
        if let Ok(v) = raw.trim().parse::<usize>() {
            return v.max(1);
        }
    }
    std::thread::available_parallelism()
        .map(|v| v.get())
        .unwrap_or(1)
}

/// Plane shadow of a covariance ellipsoid.
#[derive(Debug, Clone)]
pub struct PlaneEllipse {
    /// Coordinate indices the ellipsoid was projected onto.
    pub axes: (usize, usize),
    pub gamma: f64,
    /// Semi-axis lengths, largest first.
    pub semi_axes: (f64, f64),
    /// Boundary samples (x, y), counterclockwise from angle 0.
    pub boundary: Vec<(f64, f64)>,
}

/// Project the ellipsoid `{x : xᵀ cov⁻¹ x <= gamma}` onto the plane of two
/// coordinates. The shadow is the ellipse of the 2x2 sub-covariance on those
/// coordinates at the same level.
pub fn project_ellipsoid(
    cov: &DMatrix<f64>,
    axes: (usize, usize),
    gamma: f64,
    points: usize,
) -> Result<PlaneEllipse> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {}x{n}, expected square",
            cov.nrows()
        )));
    }
    let (i, j) = axes;
    if i == j || i >= n || j >= n {
        return Err(Error::InvalidInput(format!(
            "projection axes ({i}, {j}) must be distinct indices below {n}"
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidInput(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    if points < 3 {
        return Err(Error::InvalidInput(
            "need at least 3 boundary points".into(),
        ));
    }
    let sub = DMatrix::from_row_slice(
        2,
        2,
        &[
            cov[(i, i)],
            0.5 * (cov[(i, j)] + cov[(j, i)]),
            0.5 * (cov[(i, j)] + cov[(j, i)]),
            cov[(j, j)],
        ],
    );
    let factor = linalg::spd_sqrt(&sub, "projected covariance")?;
    let eig = linalg::symmetric_eigen_sorted(&sub);
    let semi_axes = (
        (gamma * eig.values[0]).sqrt(),
        (gamma * eig.values[1]).sqrt(),
    );
    let scale = gamma.sqrt();
    let boundary = (0..points)
        .map(|k| {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / points as f64;
            let p = &factor * DVector::from_column_slice(&[phi.cos(), phi.sin()]) * scale;
            (p[0], p[1])
        })
        .collect();
    Ok(PlaneEllipse {
        axes,
        gamma,
        semi_axes,
        boundary,
    })
}
