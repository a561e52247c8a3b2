use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::cg::{minimize_cg, CgConfig};
use super::ridge::ridge_lsq;
use crate::error::{config_err, Result};
use crate::linalg::with_ones;
use crate::mac::{fit_centers, refit_block, BlockProblem, StepConfig};
use crate::model::{backprop_gradient, nested_objective, nested_objective_on, rbf_features, Dataset, LayerKind, NestedNet};
use crate::trace::{RunStatus, TraceEvent, TraceRow, TrainTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AltOptConfig {
    pub iters: usize,
    /// Conjugate-gradient iterations on the encoder readout per iteration.
    pub cg_steps: usize,
    pub max_seconds: Option<f64>,
}

impl Default for AltOptConfig {
    fn default() -> Self {
        Self {
            iters: 20,
            cg_steps: 10,
            max_seconds: None,
        }
    }
}

/// Alternating optimization of an RBF autoencoder
/// `x -> RBF -> linear -> RBF -> linear`. With the encoder fixed the decoder
/// is refit exactly as in a W-step of the last block; with the decoder fixed
/// the encoder centers are refit on the inputs and its readout takes
/// `cg_steps` conjugate-gradient iterations on the nested objective.
pub fn alt_opt_rbf_train(
    net: &NestedNet,
    data: &Dataset,
    cfg: &AltOptConfig,
    step: &StepConfig,
) -> Result<(NestedNet, TrainTrace)> {
    let kinds: Vec<LayerKind> = net.layers().iter().map(|l| l.kind()).collect();
    if kinds
        != [
            LayerKind::GaussianRbf,
            LayerKind::LinearDense,
            LayerKind::GaussianRbf,
            LayerKind::LinearDense,
        ]
    {
        return config_err("alternating optimization needs an RBF-linear-RBF-linear autoencoder");
    }
    step.validate()?;
    let start = Instant::now();
    let mut trace = TrainTrace::default();
    let mut net = net.clone();
    let e0 = nested_objective(&net, data)?;
    push(&mut trace, &net, data, e0, start)?;
    for _ in 0..cfg.iters {
        if cfg.max_seconds.is_some_and(|s| start.elapsed().as_secs_f64() >= s) {
            trace.status = RunStatus::BudgetExhausted;
            break;
        }
        net = decoder_step(&net, data, step)?;
        net = encoder_step(&net, data, cfg.cg_steps, step)?;
        let e = nested_objective(&net, data)?;
        push(&mut trace, &net, data, e, start)?;
    }
    Ok((net, trace))
}

/// Refits the decoder to map the current codes onto the targets.
pub fn decoder_step(net: &NestedNet, data: &Dataset, step: &StepConfig) -> Result<NestedNet> {
    let codes = net.apply_range_batch(0..2, data.inputs());
    let p = BlockProblem {
        input: &codes,
        target: data.targets(),
        weight: 1.0,
        transient: 0.0,
    };
    let mut layers = net.clone().into_layers();
    for (k, l) in refit_block(net, 2..4, &p, step)? {
        layers[k] = l;
    }
    let next = NestedNet::new(layers, net.placement().to_vec())?;
    if nested_objective(&next, data)? <= nested_objective(net, data)? {
        Ok(next)
    } else {
        Ok(net.clone())
    }
}

/// Refits the encoder centers on the inputs and improves its readout with
/// conjugate gradients. New centers are kept only if they end lower.
fn encoder_step(net: &NestedNet, data: &Dataset, cg_steps: usize, step: &StepConfig) -> Result<NestedNet> {
    let before = nested_objective(net, data)?;
    let kept = readout_cg(net.clone(), data, cg_steps)?;
    let m1 = net.layer(0).spec().out_dim;
    let centers = fit_centers(data.inputs(), m1, step.layer_seed(0), &step.center_fit)?;
    let mut best = kept;
    if &centers != net.layer(0).weights() {
        let mut moved = net.clone();
        moved.layer_mut(0).set_weights(centers)?;
        // Start the readout from the map that reproduces the current codes.
        let codes = net.apply_range_batch(0..2, data.inputs());
        let spec = net.layer(1).spec().clone();
        let feats = rbf_features(data.inputs(), moved.layer(0).weights(), moved.layer(0).spec().rbf_width);
        let phi = if spec.has_bias() { with_ones(&feats) } else { feats };
        let w = ridge_lsq(&phi, &codes, 1e-10)?.transpose();
        moved.layer_mut(1).set_weights(w)?;
        let moved = readout_cg(moved, data, cg_steps)?;
        if moved.1 < best.1 {
            best = moved;
        }
    }
    if best.1 <= before {
        Ok(best.0)
    } else {
        Ok(net.clone())
    }
}

/// Conjugate gradients on the weights of layer 1 only.
fn readout_cg(mut net: NestedNet, data: &Dataset, iters: usize) -> Result<(NestedNet, f64)> {
    let shape = net.layer(1).weights().shape();
    let flat = |m: &DMatrix<f64>| DVector::from_iterator(m.len(), m.transpose().iter().copied());
    let unflat = |v: &DVector<f64>| DMatrix::from_row_slice(shape.0, shape.1, v.as_slice());
    let x0 = flat(net.layer(1).weights());
    let cfg = CgConfig {
        max_iters: iters,
        grad_tol: 0.0,
        ..CgConfig::default()
    };
    let mut scratch = net.clone();
    let out = minimize_cg(
        |w| {
            scratch.layer_mut(1).set_weights(unflat(w))?;
            let f = nested_objective(&scratch, data)?;
            let g = backprop_gradient(&scratch, data)?;
            Ok((f, flat(&g[1])))
        },
        x0,
        &cfg,
        |_, _, _| true,
    )?;
    net.layer_mut(1).set_weights(unflat(&out.x))?;
    Ok((net, out.value))
}

fn push(trace: &mut TrainTrace, net: &NestedNet, data: &Dataset, e1: f64, start: Instant) -> Result<()> {
    let e1_val = match data.validation() {
        Some((x, y)) => Some(nested_objective_on(net, x, y)?),
        None => None,
    };
    trace.rows.push(TraceRow {
        iter: trace.next_iter(),
        seconds: start.elapsed().as_secs_f64(),
        mu: None,
        e1_train: e1,
        e1_val,
        eq: None,
        constraint_viol: None,
        event: TraceEvent::Iteration,
    });
    Ok(())
}
