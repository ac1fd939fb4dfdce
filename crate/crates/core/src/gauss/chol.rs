//! Cholesky factorization with an explicit pivot tolerance.
//!
//! Positive definiteness checks throughout the crate are defined as "every
//! Cholesky pivot exceeds a fixed tolerance", so the factorization is done by
//! hand rather than through a library routine whose failure threshold we do
//! not control. Matrices here are small (tens of rows), so the textbook
//! algorithm is fine.

use nalgebra::{DMatrix, DVector};

/// Lower-triangular Cholesky factor of `m`, or `None` if any pivot
/// (the squared diagonal entry before taking the root) is `<= tol`.
pub fn cholesky_with_tol(m: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > tol) || !d.is_finite() {
            return None;
        }
        let root = d.sqrt();
        l[(j, j)] = root;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / root;
        }
    }
    Some(l)
}

/// Solve `L L^T x = b` given the lower-triangular factor `L`.
pub fn solve_with_chol(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        for k in 0..i {
            let v = y[k];
            y[i] -= l[(i, k)] * v;
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let v = y[k];
            y[i] -= l[(k, i)] * v;
        }
        y[i] /= l[(i, i)];
    }
    y
}

/// Solve `L L^T X = B` column by column.
pub fn solve_matrix_with_chol(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(b.nrows(), b.ncols());
    for c in 0..b.ncols() {
        let col = solve_with_chol(l, &DVector::from_column_slice(b.column(c).as_slice()));
        out.set_column(c, &col);
    }
    out
}

/// Inverse of `L L^T`.
pub fn inverse_from_chol(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    solve_matrix_with_chol(l, &DMatrix::identity(n, n))
}

/// `log det(L L^T)`.
pub fn logdet_from_chol(l: &DMatrix<f64>) -> f64 {
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}
