use nalgebra::{DMatrix, DVector};

use super::aux::AuxState;
use crate::error::{config_err, dim_err, Error, Result};
use crate::linalg::{row, sorted_sum};
use crate::model::{block_backprop, regularizer, Dataset, NestedNet};

/// Penalty parameter together with the transient weight decay active at it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalty {
    pub mu: f64,
    /// Extra ridge added to every layer on top of its own.
    pub transient_reg: f64,
}

impl Penalty {
    pub fn new(mu: f64) -> Self {
        Self {
            mu,
            transient_reg: 0.0,
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return config_err(format!("penalty parameter must be finite and nonnegative, got {}", self.mu));
        }
        if !(self.transient_reg.is_finite() && self.transient_reg >= 0.0) {
            return config_err("transient regularization must be finite and nonnegative");
        }
        Ok(())
    }
}

/// Splits a concatenated coordinate vector into per-block vectors.
pub(crate) fn split_flat(flat: &DVector<f64>, widths: &[usize]) -> Vec<DVector<f64>> {
    let mut off = 0;
    widths
        .iter()
        .map(|&w| {
            let v = flat.rows(off, w).into_owned();
            off += w;
            v
        })
        .collect()
}

/// Contribution of one point: `1/2 |y - g_last(z_J)|^2 + mu/2 sum_j |z_j - g_j(z_{j-1})|^2`.
pub(crate) fn point_term(
    net: &NestedNet,
    z: &[DVector<f64>],
    x: &DVector<f64>,
    y: &DVector<f64>,
    mu: f64,
) -> f64 {
    let blocks = net.blocks();
    let mut penalty = 0.0;
    for (j, zj) in z.iter().enumerate() {
        let prev = if j == 0 { x } else { &z[j - 1] };
        penalty += (zj - net.apply_range(blocks[j].clone(), prev)).norm_squared();
    }
    let last_in = z.last().unwrap_or(x);
    let out = net.apply_range(blocks[blocks.len() - 1].clone(), last_in);
    let fit = 0.5 * (y - out).norm_squared();
    if mu == 0.0 {
        fit
    } else {
        fit + 0.5 * mu * penalty
    }
}

/// Quadratic-penalty objective `E_Q(W, Z; mu)` including the layers' ridges.
pub fn qp_objective(net: &NestedNet, aux: &AuxState, data: &Dataset, mu: f64) -> Result<f64> {
    qp_objective_with(net, aux, data, Penalty::new(mu))
}

/// `E_Q` with the transient weight decay of `penalty` added to every layer.
pub fn qp_objective_with(net: &NestedNet, aux: &AuxState, data: &Dataset, penalty: Penalty) -> Result<f64> {
    penalty.check()?;
    check(net, aux, data)?;
    let (x, y) = (data.inputs(), data.targets());
    let terms = (0..data.len())
        .map(|n| point_term(net, &aux.point(n), &row(x, n), &row(y, n), penalty.mu))
        .collect::<Vec<_>>();
    let value = sorted_sum(terms) + regularizer(net, penalty.transient_reg);
    if !value.is_finite() {
        return Err(Error::NonFinite("penalized objective".into()));
    }
    Ok(value)
}

/// Gradient of `E_Q` with respect to the weights and the auxiliary coordinates.
#[derive(Debug, Clone)]
pub struct QpGradient {
    pub weights: Vec<DMatrix<f64>>,
    /// Same layout as the auxiliary coordinates.
    pub aux: Vec<DMatrix<f64>>,
}

impl QpGradient {
    pub fn norm(&self) -> f64 {
        let w: f64 = self.weights.iter().map(|g| g.norm_squared()).sum();
        let z: f64 = self.aux.iter().map(|g| g.norm_squared()).sum();
        (w + z).sqrt()
    }
}

pub fn qp_gradient(net: &NestedNet, aux: &AuxState, data: &Dataset, penalty: Penalty) -> Result<QpGradient> {
    penalty.check()?;
    check(net, aux, data)?;
    let blocks = net.blocks();
    let nb = blocks.len();
    let layers = net.layers();
    let mu = penalty.mu;
    let mut wg: Vec<DMatrix<f64>> = layers
        .iter()
        .map(|l| DMatrix::zeros(l.weights().nrows(), l.weights().ncols()))
        .collect();
    let mut zg: Vec<DMatrix<f64>> = aux
        .blocks()
        .iter()
        .map(|b| DMatrix::zeros(b.nrows(), b.ncols()))
        .collect();
    let (x, y) = (data.inputs(), data.targets());
    for n in 0..data.len() {
        let xn = row(x, n);
        let z = aux.point(n);
        for (j, range) in blocks.iter().enumerate() {
            let input = if j == 0 { &xn } else { &z[j - 1] };
            let out = net.apply_range(range.clone(), input);
            let delta = if j + 1 == nb {
                &out - row(y, n)
            } else {
                (&out - &z[j]) * mu
            };
            if j + 1 < nb {
                for i in 0..delta.len() {
                    zg[j][(n, i)] -= delta[i];
                }
            }
            let d_in = block_backprop(&layers[range.clone()], input, delta, &mut wg[range.clone()]);
            if j > 0 {
                for i in 0..d_in.len() {
                    zg[j - 1][(n, i)] += d_in[i];
                }
            }
        }
    }
    for (g, l) in wg.iter_mut().zip(layers) {
        let c = l.spec().ridge + penalty.transient_reg;
        if c != 0.0 {
            *g += l.weights() * (2.0 * c);
        }
    }
    Ok(QpGradient { weights: wg, aux: zg })
}

pub(crate) fn check(net: &NestedNet, aux: &AuxState, data: &Dataset) -> Result<()> {
    if data.input_dim() != net.input_dim() || data.output_dim() != net.output_dim() {
        return dim_err(format!(
            "data maps {} -> {}, model maps {} -> {}",
            data.input_dim(),
            data.output_dim(),
            net.input_dim(),
            net.output_dim()
        ));
    }
    aux.check_against(net, data.len())
}
