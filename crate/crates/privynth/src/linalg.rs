//! Small dense linear-algebra helpers used throughout the crate.
//!
//! Everything here operates on `DMatrix<f64>` at desk scale (a few hundred
//! rows at most); no attempt is made to exploit sparsity.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetrize a square matrix: `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Relative Frobenius distance `‖a − b‖_F / ‖b‖_F` (absolute when `b = 0`).
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm();
    if denom == 0.0 {
        (a - b).norm()
    } else {
        (a - b).norm() / denom
    }
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// non-increasing order and matching eigenvector columns.
pub struct SortedEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn symmetric_eigen_sorted(m: &DMatrix<f64>) -> SortedEigen {
    let sym = symmetrize(m);
    let SymmetricEigen {
        eigenvalues,
        eigenvectors,
    } = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eigenvalues[j].partial_cmp(&eigenvalues[i]).unwrap());
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eigenvalues[i]));
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    SortedEigen { values, vectors }
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue_sym(m: &DMatrix<f64>) -> f64 {
    let sym = symmetrize(m);
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue_sym(m: &DMatrix<f64>) -> f64 {
    let sym = symmetrize(m);
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Cholesky factorization that reports which matrix failed.
pub fn cholesky_spd(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(m)).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Inverse of an SPD matrix via its Cholesky factorization.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(cholesky_spd(m, what)?.inverse())
}

/// Symmetric positive definite square root `m^{1/2}`.
pub fn spd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    spd_power(m, 0.5, what)
}

/// Symmetric positive definite inverse square root `m^{-1/2}`.
pub fn spd_inv_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    spd_power(m, -0.5, what)
}

fn spd_power(m: &DMatrix<f64>, exponent: f64, what: &str) -> Result<DMatrix<f64>> {
    let eig = symmetric_eigen_sorted(m);
    if eig.values.iter().any(|&v| v <= 0.0) {
        return Err(Error::NotPositiveDefinite(what.to_string()));
    }
    let powered = DVector::from_iterator(
        eig.values.len(),
        eig.values.iter().map(|&v| v.powf(exponent)),
    );
    Ok(&eig.vectors * DMatrix::from_diagonal(&powered) * eig.vectors.transpose())
}

/// Numerical rank report of a rectangular matrix.
pub struct RankReport {
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub tolerance: f64,
}

/// Rank via singular values: `σ` counts as nonzero iff
/// `σ > max(rows, cols) · σ_max · 2^-52`.
pub fn numerical_rank(m: &DMatrix<f64>) -> RankReport {
    let mut singular_values: Vec<f64> = m.singular_values().iter().cloned().collect();
    singular_values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let sigma_max = singular_values.first().cloned().unwrap_or(0.0);
    let tolerance = m.nrows().max(m.ncols()) as f64 * sigma_max * 2.0_f64.powi(-52);
    let rank = singular_values.iter().filter(|&&s| s > tolerance).count();
    RankReport {
        rank,
        singular_values,
        tolerance,
    }
}

/// Largest eigenvalue modulus of a general square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Condition number estimate of a symmetric matrix from its eigenvalue range.
pub fn condition_sym(m: &DMatrix<f64>) -> f64 {
    let eig = symmetric_eigen_sorted(m);
    let max = eig.values[0].abs();
    let min = eig.values[eig.values.len() - 1].abs();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Reject matrices containing NaN or infinities; `name` feeds the error text
/// so callers see e.g. "non-finite entry at A[0][1]".
pub fn check_finite_matrix(m: &DMatrix<f64>, name: &str) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFinite(format!("{name}[{i}][{j}]")));
            }
        }
    }
    Ok(())
}

/// Vector variant of [`check_finite_matrix`].
pub fn check_finite_vector(v: &DVector<f64>, name: &str) -> Result<()> {
    for i in 0..v.len() {
        if !v[i].is_finite() {
            return Err(Error::NonFinite(format!("{name}[{i}]")));
        }
    }
    Ok(())
}

/// Row-major nested-array view of a matrix, the JSON wire format.
pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Parse a row-major nested array into a matrix, enforcing rectangularity.
pub fn rows_to_matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::DimensionMismatch(format!("{name} has no rows")));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(Error::DimensionMismatch(format!("{name} has empty rows")));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::DimensionMismatch(format!(
                "{name} row {i} has {} entries, expected {ncols}",
                row.len()
            )));
        }
    }
    let m = DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]);
    check_finite_matrix(&m, name)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sorted_eigen_is_descending_and_orthonormal() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let eig = symmetric_eigen_sorted(&m);
        assert!(eig.values[0] >= eig.values[1] && eig.values[1] >= eig.values[2]);
        let qtq = eig.vectors.transpose() * &eig.vectors;
        assert_relative_eq!(qtq, DMatrix::identity(3, 3), epsilon = 1e-12);
        let rebuilt = &eig.vectors * DMatrix::from_diagonal(&eig.values) * eig.vectors.transpose();
        assert_relative_eq!(rebuilt, m, epsilon = 1e-12);
    }

    #[test]
    fn spd_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = spd_sqrt(&m, "m").unwrap();
        assert_relative_eq!(&r * &r, m, epsilon = 1e-12);
    }

    #[test]
    fn spd_sqrt_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            spd_sqrt(&m, "m"),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn rank_of_outer_product_is_one() {
        let v = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        let m = &v * v.transpose();
        assert_eq!(numerical_rank(&m).rank, 1);
    }

    #[test]
    fn finite_check_reports_location() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        let err = check_finite_matrix(&m, "A").unwrap_err();
        assert_eq!(err.to_string(), "non-finite entry at A[0][1]");
    }

    #[test]
    fn rows_roundtrip_is_exact() {
        let m = DMatrix::from_row_slice(2, 3, &[1.5, -2.25, 3.0, 0.1, 0.2, 0.3]);
        let rows = matrix_to_rows(&m);
        let back = rows_to_matrix(&rows, "m").unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn ragged_rows_rejected() {
        let rows = vec![vec![1.0, 2.0], vec![3.0]];
        assert!(rows_to_matrix(&rows, "m").is_err());
    }
}
