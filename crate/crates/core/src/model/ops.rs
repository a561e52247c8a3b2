use nalgebra::{DMatrix, DVector};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::Dataset;
use super::layer::{Layer, LayerSpec};
use super::net::NestedNet;
use crate::error::{dim_err, Error, Result};
use crate::linalg::{frobenius_sq, row, sorted_sum};

/// Outputs of every layer for input `x`, first layer first.
pub fn forward(net: &NestedNet, x: &[f64]) -> Result<Vec<DVector<f64>>> {
    if x.len() != net.input_dim() {
        return dim_err(format!(
            "input has length {}, model expects {}",
            x.len(),
            net.input_dim()
        ));
    }
    let mut a = DVector::from_column_slice(x);
    let mut outs = Vec::with_capacity(net.layers().len());
    for (k, layer) in net.layers().iter().enumerate() {
        a = layer.apply(&a);
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("output of layer {k}")));
        }
        outs.push(a.clone());
    }
    Ok(outs)
}

/// `sum_l (ridge_l + extra) |W_l|_F^2`.
pub fn regularizer(net: &NestedNet, extra: f64) -> f64 {
    net.layers()
        .iter()
        .map(|l| {
            let c = l.spec().ridge + extra;
            if c == 0.0 {
                0.0
            } else {
                c * frobenius_sq(l.weights())
            }
        })
        .sum()
}

/// Nested least-squares objective on the training split.
pub fn nested_objective(net: &NestedNet, data: &Dataset) -> Result<f64> {
    nested_objective_on(net, data.inputs(), data.targets())
}

/// `1/2 sum_n |y_n - f(x_n)|^2 + regularizer` on arbitrary points.
pub fn nested_objective_on(net: &NestedNet, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    check_data(net, x, y)?;
    let terms = (0..x.nrows())
        .map(|n| 0.5 * (net.apply(&row(x, n)) - row(y, n)).norm_squared())
        .collect::<Vec<_>>();
    let value = sorted_sum(terms) + regularizer(net, 0.0);
    if !value.is_finite() {
        return Err(Error::NonFinite("nested objective".into()));
    }
    Ok(value)
}

/// Sum of squared errors `sum_n |y_n - f(x_n)|^2`, without regularization.
pub fn squared_error(net: &NestedNet, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    check_data(net, x, y)?;
    let terms = (0..x.nrows())
        .map(|n| (net.apply(&row(x, n)) - row(y, n)).norm_squared())
        .collect();
    Ok(sorted_sum(terms))
}

/// Exact gradient of the nested objective by reverse-mode differentiation.
pub fn backprop_gradient(net: &NestedNet, data: &Dataset) -> Result<Vec<DMatrix<f64>>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    gradient_on_points(net, data.inputs(), data.targets(), &idx, true)
}

/// Gradient of `1/2 sum_{n in indices} |y_n - f(x_n)|^2`, plus the ridge
/// gradient when `with_reg` is set. Points are accumulated in the given order.
pub fn gradient_on_points(
    net: &NestedNet,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    indices: &[usize],
    with_reg: bool,
) -> Result<Vec<DMatrix<f64>>> {
    check_data(net, x, y)?;
    let mut grads: Vec<DMatrix<f64>> = net
        .layers()
        .iter()
        .map(|l| DMatrix::zeros(l.weights().nrows(), l.weights().ncols()))
        .collect();
    for &n in indices {
        let xn = row(x, n);
        let out = net.apply(&xn);
        let delta = out - row(y, n);
        block_backprop(net.layers(), &xn, delta, &mut grads);
    }
    if with_reg {
        for (g, l) in grads.iter_mut().zip(net.layers()) {
            let c = l.spec().ridge;
            if c != 0.0 {
                *g += l.weights() * (2.0 * c);
            }
        }
    }
    if !grads.iter().all(|g| g.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(grads)
}

/// Back-propagates `delta` (derivative of a loss with respect to the output of
/// `layers` at `input`) and accumulates weight gradients into `grads`.
/// Returns the derivative with respect to `input`.
pub(crate) fn block_backprop(
    layers: &[Layer],
    input: &DVector<f64>,
    mut delta: DVector<f64>,
    grads: &mut [DMatrix<f64>],
) -> DVector<f64> {
    let mut acts = Vec::with_capacity(layers.len());
    let mut a = input.clone();
    for layer in layers {
        let next = layer.apply(&a);
        acts.push(a);
        a = next;
    }
    for (k, layer) in layers.iter().enumerate().rev() {
        let jac = layer.jacobians(&acts[k]);
        let g = &mut grads[k];
        for h in 0..jac.units.nrows() {
            let d = delta[h];
            if d != 0.0 {
                for i in 0..jac.units.ncols() {
                    g[(h, i)] += d * jac.units[(h, i)];
                }
            }
        }
        delta = jac.input.tr_mul(&delta);
    }
    delta
}

/// Draws every weight of layer `k` uniformly from `[-1/sqrt(in_k), 1/sqrt(in_k)]`.
pub fn init_weights(specs: &[LayerSpec], placement: Vec<usize>, seed: u64) -> Result<NestedNet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(specs.len());
    for spec in specs {
        spec.validate()?;
        let b = 1.0 / (spec.in_dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-b, b).map_err(|e| Error::Config(e.to_string()))?;
        let values: Vec<f64> = (0..spec.param_count()).map(|_| dist.sample(&mut rng)).collect();
        let w = DMatrix::from_row_slice(spec.out_dim, spec.row_len(), &values);
        layers.push(Layer::new(spec.clone(), w)?);
    }
    NestedNet::new(layers, placement)
}

/// One gradient step `W - step * grad E1(W)`.
pub fn bias_warmup_step(net: &NestedNet, data: &Dataset, step: f64) -> Result<NestedNet> {
    let grads = backprop_gradient(net, data)?;
    let mut out = net.clone();
    for (k, g) in grads.iter().enumerate() {
        let w = net.layer(k).weights() - g * step;
        out.layer_mut(k).set_weights(w)?;
    }
    Ok(out)
}

/// Single gradient step with the step size chosen by halving from 1 until the
/// objective decreases. Returns the new net and the step used, or the
/// unchanged net and 0 when no tried step decreases the objective.
pub fn bias_warmup(net: &NestedNet, data: &Dataset) -> Result<(NestedNet, f64)> {
    let e0 = nested_objective(net, data)?;
    let grads = backprop_gradient(net, data)?;
    let mut step = 1.0;
    for _ in 0..=30 {
        let mut cand = net.clone();
        for (k, g) in grads.iter().enumerate() {
            cand.layer_mut(k).set_weights(net.layer(k).weights() - g * step)?;
        }
        if let Ok(e) = nested_objective(&cand, data) {
            if e < e0 {
                return Ok((cand, step));
            }
        }
        step *= 0.5;
    }
    Ok((net.clone(), 0.0))
}

fn check_data(net: &NestedNet, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != net.input_dim() || y.ncols() != net.output_dim() || x.nrows() != y.nrows() {
        return dim_err(format!(
            "data is {}x{} -> {}x{}, model maps {} -> {}",
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols(),
            net.input_dim(),
            net.output_dim()
        ));
    }
    Ok(())
}
