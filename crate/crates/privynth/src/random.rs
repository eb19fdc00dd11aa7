//! Deterministic randomness.
//!
//! Every stochastic routine in the crate draws from a ChaCha8 stream keyed by
//! an explicit `u64` seed, so identical seeds reproduce identical results on
//! any platform. Per-trial generators use the cipher's stream index, which
//! makes trial outcomes independent of execution order and thread count.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Root generator for a given seed.
pub fn master_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for one Monte Carlo trial. Each trial gets its own ChaCha
/// stream, so trial `i` sees the same draws whether trials run sequentially
/// or in parallel.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Vector of iid standard normal draws.
pub fn standard_normal_vector<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

/// Matrix of iid standard normal draws.
pub fn standard_normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Haar-ish random orthogonal matrix from the QR factorization of a Gaussian
/// matrix, with column signs fixed by the R diagonal.
pub fn random_orthogonal<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = standard_normal_matrix(rng, n, n);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Random SPD matrix with eigenvalues log-spaced over `[1/sqrt(cond), sqrt(cond)]`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, cond: f64) -> DMatrix<f64> {
    assert!(cond >= 1.0, "condition number must be at least 1");
    let q = random_orthogonal(rng, n);
    let half = 0.5 * cond.ln();
    let eigs = DVector::from_iterator(
        n,
        (0..n).map(|i| {
            let t = if n == 1 {
                0.5
            } else {
                i as f64 / (n - 1) as f64
            };
            ((2.0 * t - 1.0) * half).exp()
        }),
    );
    &q * DMatrix::from_diagonal(&eigs) * q.transpose()
}

/// Random Schur-stable `A` (spectral radius scaled to `radius`) paired with a
/// full-row-rank `C`. Used by tests that need generic observable systems.
pub fn random_stable_system<R: Rng>(
    rng: &mut R,
    n: usize,
    p: usize,
    radius: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let raw = standard_normal_matrix(rng, n, n);
    let rho = crate::linalg::spectral_radius(&raw);
    let a = if rho > 0.0 {
        raw * (radius / rho)
    } else {
        raw
    };
    let c = standard_normal_matrix(rng, p, n);
    (a, c)
}
