use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::linalg::row;
use crate::model::NestedNet;

/// Auxiliary coordinates: one `N x width` matrix per placed boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxState {
    blocks: Vec<DMatrix<f64>>,
}

impl AuxState {
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        if let Some(first) = blocks.first() {
            if blocks.iter().any(|b| b.nrows() != first.nrows()) {
                return dim_err("auxiliary blocks have different numbers of points");
            }
        }
        if !blocks.iter().all(|b| b.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("auxiliary coordinates".into()));
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn block(&self, j: usize) -> &DMatrix<f64> {
        &self.blocks[j]
    }

    pub fn into_blocks(self) -> Vec<DMatrix<f64>> {
        self.blocks
    }

    /// Number of points, or `None` when no boundary is placed.
    pub fn len(&self) -> Option<usize> {
        self.blocks.first().map(|b| b.nrows())
    }

    pub fn widths(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.ncols()).collect()
    }

    pub fn total_width(&self) -> usize {
        self.blocks.iter().map(|b| b.ncols()).sum()
    }

    /// Coordinates of point `n`, one vector per block.
    pub fn point(&self, n: usize) -> Vec<DVector<f64>> {
        self.blocks.iter().map(|b| row(b, n)).collect()
    }

    /// Coordinates of point `n` concatenated across blocks.
    pub fn point_flat(&self, n: usize) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.total_width());
        for b in &self.blocks {
            v.extend(b.row(n).iter());
        }
        DVector::from_vec(v)
    }

    /// Rebuilds a state from per-point concatenated coordinates.
    pub(crate) fn from_points(widths: &[usize], points: &[DVector<f64>]) -> Result<Self> {
        let mut blocks: Vec<DMatrix<f64>> =
            widths.iter().map(|&w| DMatrix::zeros(points.len(), w)).collect();
        for (n, p) in points.iter().enumerate() {
            let mut off = 0;
            for b in &mut blocks {
                for i in 0..b.ncols() {
                    b[(n, i)] = p[off + i];
                }
                off += b.ncols();
            }
        }
        Self::new(blocks)
    }

    pub(crate) fn check_against(&self, net: &NestedNet, n_points: usize) -> Result<()> {
        let widths = net.aux_widths();
        if self.widths() != widths {
            return dim_err(format!(
                "auxiliary widths {:?} do not match placement widths {:?}",
                self.widths(),
                widths
            ));
        }
        if let Some(n) = self.len() {
            if n != n_points {
                return dim_err(format!("auxiliary coordinates cover {n} points, data has {n_points}"));
            }
        }
        Ok(())
    }
}

/// Sets every auxiliary coordinate to the forward-pass activation it stands
/// for, which makes all constraints hold exactly.
pub fn lift_to_feasible(net: &NestedNet, x: &DMatrix<f64>) -> Result<AuxState> {
    if x.ncols() != net.input_dim() {
        return dim_err(format!("inputs have {} columns, model expects {}", x.ncols(), net.input_dim()));
    }
    let ranges = net.blocks();
    let mut blocks: Vec<DMatrix<f64>> =
        net.aux_widths().iter().map(|&w| DMatrix::zeros(x.nrows(), w)).collect();
    // Point by point with the same arithmetic as the objectives, so the
    // lifted constraints hold exactly.
    for n in 0..x.nrows() {
        let mut a = row(x, n);
        for (b, range) in blocks.iter_mut().zip(&ranges) {
            a = net.apply_range(range.clone(), &a);
            b.row_mut(n).copy_from(&a.transpose());
        }
    }
    AuxState::new(blocks)
}

/// Constraint residuals `z_j - g_j(z_{j-1})` of point `n`, one vector per block.
pub(crate) fn point_constraints(net: &NestedNet, z: &[DVector<f64>], x: &DVector<f64>) -> Vec<DVector<f64>> {
    let blocks = net.blocks();
    let mut out = Vec::with_capacity(z.len());
    for (j, zj) in z.iter().enumerate() {
        let prev = if j == 0 { x } else { &z[j - 1] };
        out.push(zj - net.apply_range(blocks[j].clone(), prev));
    }
    out
}

/// Largest constraint violation `|z_jn - g_j(z_{j-1,n})|` over every block
/// and point, one entry per block.
pub fn constraint_residuals(net: &NestedNet, aux: &AuxState, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    aux.check_against(net, x.nrows())?;
    let mut worst = vec![0.0f64; aux.blocks().len()];
    for n in 0..x.nrows() {
        let r = point_constraints(net, &aux.point(n), &row(x, n));
        for (w, rj) in worst.iter_mut().zip(&r) {
            *w = w.max(rj.norm());
        }
    }
    Ok(worst)
}

/// Largest constraint violation across all blocks; zero without placed boundaries.
pub fn max_constraint_violation(net: &NestedNet, aux: &AuxState, x: &DMatrix<f64>) -> Result<f64> {
    Ok(constraint_residuals(net, aux, x)?.into_iter().fold(0.0, f64::max))
}

/// Lagrange multiplier estimates `-mu * (z_jn - g_j(z_{j-1,n}))`, laid out like
/// the auxiliary coordinates.
pub fn multiplier_estimates(
    net: &NestedNet,
    aux: &AuxState,
    x: &DMatrix<f64>,
    mu: f64,
) -> Result<Vec<DMatrix<f64>>> {
    aux.check_against(net, x.nrows())?;
    let mut out: Vec<DMatrix<f64>> = aux
        .blocks()
        .iter()
        .map(|b| DMatrix::zeros(b.nrows(), b.ncols()))
        .collect();
    for n in 0..x.nrows() {
        let r = point_constraints(net, &aux.point(n), &row(x, n));
        for (m, rj) in out.iter_mut().zip(&r) {
            for i in 0..rj.len() {
                m[(n, i)] = -mu * rj[i];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_weights, LayerSpec};

    fn net() -> NestedNet {
        let specs = [
            LayerSpec::sigmoid(3, 4),
            LayerSpec::sigmoid(4, 2),
            LayerSpec::linear(2, 3),
        ];
        init_weights(&specs, vec![1, 2], 5).unwrap()
    }

    #[test]
    fn lifted_state_is_feasible() {
        let net = net();
        let x = DMatrix::from_fn(6, 3, |n, i| (n as f64 - i as f64) * 0.3);
        let aux = lift_to_feasible(&net, &x).unwrap();
        assert_eq!(aux.widths(), vec![4, 2]);
        let r = constraint_residuals(&net, &aux, &x).unwrap();
        assert!(r.iter().all(|&v| v < 1e-14), "{r:?}");
    }

    #[test]
    fn multipliers_are_scaled_residuals() {
        let net = net();
        let x = DMatrix::from_fn(5, 3, |n, i| (n * i) as f64 * 0.1);
        let aux = lift_to_feasible(&net, &x).unwrap();
        let mut blocks = aux.into_blocks();
        blocks[1][(2, 1)] += 0.25;
        let aux = AuxState::new(blocks).unwrap();
        let lam = multiplier_estimates(&net, &aux, &x, 100.0).unwrap();
        assert_eq!(lam[1][(2, 1)], -25.0);
        assert!(lam[0].iter().all(|&v| v.abs() < 1e-12));
        let worst = constraint_residuals(&net, &aux, &x).unwrap();
        assert_eq!(worst[1], 0.25);
    }

    #[test]
    fn flat_points_round_trip() {
        let net = net();
        let x = DMatrix::from_fn(4, 3, |n, i| (n + i) as f64);
        let aux = lift_to_feasible(&net, &x).unwrap();
        let pts: Vec<_> = (0..4).map(|n| aux.point_flat(n)).collect();
        assert_eq!(AuxState::from_points(&aux.widths(), &pts).unwrap(), aux);
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let net = net();
        let aux = AuxState::new(vec![DMatrix::zeros(3, 4)]).unwrap();
        assert!(constraint_residuals(&net, &aux, &DMatrix::zeros(3, 3)).is_err());
    }
}
