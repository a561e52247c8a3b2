//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Sums values in ascending order so the result does not depend on the
/// order in which the terms were produced.
pub fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Copies row `n` of a point matrix into a column vector.
pub fn row(m: &DMatrix<f64>, n: usize) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.row(n).iter().copied())
}

/// Appends a column of ones.
pub fn with_ones(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.ncols();
    m.clone().insert_column(n, 1.0)
}

/// Cholesky factorization, retrying once with a small diagonal jitter when
/// the matrix is numerically singular.
pub(crate) fn cholesky_with_jitter(a: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = a.nrows();
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c);
    }
    let scale = (a.trace() / n.max(1) as f64).max(1.0);
    let mut b = a;
    for i in 0..n {
        b[(i, i)] += 1e-12 * scale;
    }
    Cholesky::new(b).ok_or_else(|| {
        Error::Singular(format!("{n}x{n} normal equations are not positive definite"))
    })
}

pub(crate) fn frobenius_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

pub(crate) fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}
