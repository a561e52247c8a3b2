use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{config_err, Result};

/// Principal directions of a point set.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// Orthonormal directions, one per row, by decreasing variance.
    pub components: DMatrix<f64>,
    /// Variance along every direction (covariance normalized by N).
    pub eigenvalues: DVector<f64>,
}

impl Pca {
    /// Fits all `D` directions of the rows of `x`.
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return config_err("principal components of an empty matrix");
        }
        let n = x.nrows() as f64;
        let mean = x.row_mean().transpose();
        let centered = center(x, &mean);
        let cov = centered.tr_mul(&centered) / n;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let components = DMatrix::from_fn(order.len(), x.ncols(), |r, c| eig.eigenvectors[(c, order[r])]);
        let eigenvalues = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i].max(0.0)));
        Ok(Self {
            mean,
            components,
            eigenvalues,
        })
    }

    /// Coordinates of the rows of `x` along the first `d` directions.
    pub fn project(&self, x: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
        center(x, &self.mean) * self.components.rows(0, d).transpose()
    }

    /// Points rebuilt from `d`-dimensional coordinates.
    pub fn reconstruct(&self, codes: &DMatrix<f64>) -> DMatrix<f64> {
        let d = codes.ncols();
        let mut out = codes * self.components.rows(0, d);
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        out
    }
}

fn center(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= mean.transpose();
    }
    c
}

/// Centers `x` and projects it onto its top `d` principal directions.
pub fn pca_embed(x: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    if d == 0 || d > x.ncols() {
        return config_err(format!("cannot embed {}-dimensional data in {d} dimensions", x.ncols()));
    }
    Ok(Pca::fit(x)?.project(x, d))
}
