use nalgebra::DMatrix;

use crate::error::{config_err, dim_err, Result};
use crate::linalg::cholesky_with_jitter;

/// Solves `min_W |T - Phi W|_F^2 + lambda |W|_F^2` through the normal equations
/// `(Phi^T Phi + lambda I) W = Phi^T T`. Returns `W` with one row per column of
/// `phi` and one column per column of `targets`.
pub fn ridge_lsq(phi: &DMatrix<f64>, targets: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if phi.nrows() != targets.nrows() {
        return dim_err(format!(
            "design has {} rows but targets have {}",
            phi.nrows(),
            targets.nrows()
        ));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return config_err(format!("ridge penalty must be finite and nonnegative, got {lambda}"));
    }
    let mut a = phi.tr_mul(phi);
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    let b = phi.tr_mul(targets);
    Ok(cholesky_with_jitter(a)?.solve(&b))
}
