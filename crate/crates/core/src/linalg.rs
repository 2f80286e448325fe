//! Dense linear-algebra aliases and a few helpers shared across modules.

use nalgebra::{DMatrix, DVector};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

pub(crate) fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

pub(crate) fn first_non_finite(values: &[f64]) -> Option<usize> {
    values.iter().position(|v| !v.is_finite())
}

/// Row-major nested vectors, used by the text serializations.
pub(crate) fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> crate::Result<Matrix> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        let actual_cols = rows.first().map_or(0, |r| r.len());
        return Err(crate::Error::shape(
            what,
            format!("{nrows}x{ncols}"),
            format!("{}x{}", rows.len(), actual_cols),
        ));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub(crate) fn diag(values: &[f64]) -> Matrix {
    Matrix::from_diagonal(&Vector::from_column_slice(values))
}

pub(crate) fn is_symmetric(m: &Matrix, tol: f64) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}
