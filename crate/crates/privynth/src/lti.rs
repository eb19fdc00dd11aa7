//! Discrete-time LTI system model and its horizon-K stacked form.
//!
//! A system `x(k+1) = A x(k) + B u(k)`, `y(k) = C x(k) + D u(k)` releases the
//! stacked output `Y = O x0 + T U` over `K` steps, where `O` stacks the blocks
//! `C A^k` and `T` is the block lower-triangular Markov-parameter matrix. The
//! observability gramian `Wo = OᵀO` measures how strongly the release exposes
//! the initial state.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Discrete-time LTI system `(A, B, C, D)` with an optional sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    dt: Option<f64>,
}

impl LtiSystem {
    /// Build a system, validating dimensions and finiteness.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || n == 0 {
            return Err(Error::DimensionMismatch(format!(
                "A must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "B has {} rows, expected {n}",
                b.nrows()
            )));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "C is {}x{}, expected p x {n} with p >= 1",
                c.nrows(),
                c.ncols()
            )));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        linalg::check_finite_matrix(&a, "A")?;
        linalg::check_finite_matrix(&b, "B")?;
        linalg::check_finite_matrix(&c, "C")?;
        linalg::check_finite_matrix(&d, "D")?;
        Ok(Self {
            a,
            b,
            c,
            d,
            dt: None,
        })
    }

    /// Input-free system: `B` and `D` are a single zero column so stacked
    /// inputs are well-defined (a length-K zero vector).
    pub fn autonomous(a: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let p = c.nrows();
        Self::new(a, DMatrix::zeros(n, 1), c, DMatrix::zeros(p, 1))
    }

    /// Attach a sample time in seconds.
    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = Some(dt);
        self
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn dt(&self) -> Option<f64> {
        self.dt
    }

    /// State dimension n.
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    /// Input dimension m.
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    /// Output dimension p.
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Stack the system over `horizon` steps.
    pub fn stack(&self, horizon: usize) -> Result<StackedSystem> {
        if horizon == 0 {
            return Err(Error::InvalidInput("horizon must be positive".into()));
        }
        let n = self.state_dim();
        let m = self.input_dim();
        let p = self.output_dim();
        let pk = p * horizon;

        // Powers A^0 .. A^{K-1}; O block k is C A^k.
        let mut powers = Vec::with_capacity(horizon);
        powers.push(DMatrix::identity(n, n));
        for k in 1..horizon {
            let next = &powers[k - 1] * &self.a;
            powers.push(next);
        }

        let mut obs = DMatrix::zeros(pk, n);
        for k in 0..horizon {
            obs.view_mut((k * p, 0), (p, n)).copy_from(&(&self.c * &powers[k]));
        }

        // Markov parameters: D on the block diagonal, C A^{l-1} B below.
        let mut markov = Vec::with_capacity(horizon);
        markov.push(self.d.clone());
        for l in 1..horizon {
            markov.push(&self.c * &powers[l - 1] * &self.b);
        }
        let mut toeplitz = DMatrix::zeros(pk, m * horizon);
        for i in 0..horizon {
            for j in 0..=i {
                toeplitz
                    .view_mut((i * p, j * m), (p, m))
                    .copy_from(&markov[i - j]);
            }
        }

        let gramian = obs.transpose() * &obs;
        Ok(StackedSystem {
            horizon,
            obs,
            toeplitz,
            gramian,
        })
    }

    /// Noise-free stacked output for initial state `x0` and stacked input `u`.
    pub fn simulate(&self, x0: &DVector<f64>, u: &DVector<f64>, horizon: usize) -> Result<DVector<f64>> {
        if horizon == 0 {
            return Err(Error::InvalidInput("horizon must be positive".into()));
        }
        let n = self.state_dim();
        let m = self.input_dim();
        let p = self.output_dim();
        if x0.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "x0 has length {}, expected {n}",
                x0.len()
            )));
        }
        if u.len() != m * horizon {
            return Err(Error::DimensionMismatch(format!(
                "stacked input has length {}, expected {}",
                u.len(),
                m * horizon
            )));
        }
        linalg::check_finite_vector(x0, "x0")?;
        linalg::check_finite_vector(u, "U")?;

        let mut x = x0.clone();
        let mut y = DVector::zeros(p * horizon);
        for k in 0..horizon {
            let uk = u.rows(k * m, m).into_owned();
            let yk = &self.c * &x + &self.d * &uk;
            y.rows_mut(k * p, p).copy_from(&yk);
            x = &self.a * &x + &self.b * &uk;
        }
        Ok(y)
    }

    /// Rank report of the horizon-K observability matrix.
    pub fn observability(&self, horizon: usize) -> Result<ObservabilityReport> {
        let stacked = self.stack(horizon)?;
        Ok(stacked.observability())
    }

    /// Infinite-horizon observability gramian for a Schur-stable `A`: the
    /// unique `W` with `AᵀWA - W + CᵀC = 0`, via Kronecker vectorization.
    pub fn steady_state_gramian(&self) -> Result<DMatrix<f64>> {
        let rho = linalg::spectral_radius(&self.a);
        if rho >= 1.0 {
            return Err(Error::NotSchurStable { modulus: rho });
        }
        let n = self.state_dim();
        let at = self.a.transpose();
        let ctc = self.c.transpose() * &self.c;
        // vec(AᵀWA) = (Aᵀ ⊗ Aᵀ) vec(W), so (Aᵀ⊗Aᵀ - I) vec(W) = -vec(CᵀC).
        let coeff = at.kronecker(&at) - DMatrix::identity(n * n, n * n);
        let rhs = -DVector::from_column_slice(ctc.as_slice());
        let sol = coeff
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Infeasible("steady-state gramian system is singular".into()))?;
        let w = linalg::symmetrize(&DMatrix::from_column_slice(n, n, sol.as_slice()));
        let residual = (self.a.transpose() * &w * &self.a - &w + &ctc).norm();
        if residual > 1e-10 * ctc.norm().max(1.0) {
            return Err(Error::Infeasible(format!(
                "steady-state gramian residual {residual:.3e} too large"
            )));
        }
        Ok(w)
    }
}

/// Horizon-K stacked form of a system: observability matrix, Markov-parameter
/// Toeplitz matrix, and observability gramian.
#[derive(Debug, Clone)]
pub struct StackedSystem {
    pub horizon: usize,
    /// pK x n stack of C A^k blocks.
    pub obs: DMatrix<f64>,
    /// pK x mK block lower-triangular map from stacked inputs to outputs.
    pub toeplitz: DMatrix<f64>,
    /// n x n gramian ObsᵀObs.
    pub gramian: DMatrix<f64>,
}

impl StackedSystem {
    pub fn state_dim(&self) -> usize {
        self.obs.ncols()
    }
    /// Total stacked output dimension pK.
    pub fn stacked_dim(&self) -> usize {
        self.obs.nrows()
    }
    pub fn output_dim(&self) -> usize {
        self.stacked_dim() / self.horizon
    }
    pub fn input_dim(&self) -> usize {
        self.toeplitz.ncols() / self.horizon
    }

    /// Numerical rank of the observability matrix.
    pub fn observability(&self) -> ObservabilityReport {
        let report = linalg::numerical_rank(&self.obs);
        ObservabilityReport {
            rank: report.rank,
            full_column_rank: report.rank == self.state_dim(),
            tolerance: report.tolerance,
        }
    }

    /// Error unless the observability matrix has full column rank.
    pub fn require_observable(&self) -> Result<()> {
        let report = self.observability();
        if report.full_column_rank {
            Ok(())
        } else {
            Err(Error::RankDeficient {
                rank: report.rank,
                needed: self.state_dim(),
            })
        }
    }
}

/// Rank report of an observability matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityReport {
    pub rank: usize,
    pub full_column_rank: bool,
    pub tolerance: f64,
}
