use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::model::{gradient_on_points, nested_objective, nested_objective_on, Dataset, NestedNet};
use crate::trace::{RunStatus, TraceEvent, TraceRow, TrainTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub minibatch: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Seed of the per-epoch shuffles.
    pub seed: u64,
    /// Emit a trace row every this many epochs.
    pub trace_every: usize,
    /// Abort once the objective exceeds this multiple of its initial value.
    pub divergence_factor: f64,
    pub max_seconds: Option<f64>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            minibatch: 20,
            learning_rate: 1e-6,
            epochs: 100,
            seed: 0,
            trace_every: 1,
            divergence_factor: 1e3,
            max_seconds: None,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.minibatch == 0 || self.trace_every == 0 {
            return config_err("minibatch and trace_every must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return config_err(format!("learning rate must be nonnegative, got {}", self.learning_rate));
        }
        if !(self.divergence_factor > 1.0) {
            return config_err("divergence_factor must exceed 1");
        }
        Ok(())
    }
}

/// Minibatch stochastic gradient descent on the nested objective. Each epoch
/// visits the points in a fresh random order; the minibatch gradient sums the
/// data terms of its points in increasing index order plus the full ridge
/// gradient, so a minibatch of the whole set is a full gradient step.
pub fn sgd_train(net: &NestedNet, data: &Dataset, cfg: &SgdConfig) -> Result<(NestedNet, TrainTrace)> {
    cfg.validate()?;
    if cfg.minibatch > data.len() {
        return config_err(format!("minibatch {} exceeds {} points", cfg.minibatch, data.len()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = TrainTrace::default();
    let mut net = net.clone();
    let e0 = nested_objective(&net, data)?;
    push(&mut trace, &net, data, e0, start)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.minibatch) {
            let mut idx = chunk.to_vec();
            idx.sort_unstable();
            let grads = gradient_on_points(&net, data.inputs(), data.targets(), &idx, true)?;
            for (k, g) in grads.iter().enumerate() {
                let lr = cfg.learning_rate;
                net.layer_mut(k).weights_mut().zip_apply(g, |w, gi| *w -= lr * gi);
            }
        }
        let e = match nested_objective(&net, data) {
            Ok(e) if e <= cfg.divergence_factor * e0 => e,
            Ok(e) => {
                trace.status = RunStatus::Diverged;
                push(&mut trace, &net, data, e, start)?;
                break;
            }
            Err(Error::NonFinite(_)) => {
                trace.status = RunStatus::Diverged;
                break;
            }
            Err(err) => return Err(err),
        };
        let out_of_time = cfg.max_seconds.is_some_and(|s| start.elapsed().as_secs_f64() >= s);
        if epoch % cfg.trace_every == 0 || epoch == cfg.epochs || out_of_time {
            push(&mut trace, &net, data, e, start)?;
        }
        if out_of_time {
            trace.status = RunStatus::BudgetExhausted;
            break;
        }
    }
    Ok((net, trace))
}

fn push(trace: &mut TrainTrace, net: &NestedNet, data: &Dataset, e1: f64, start: Instant) -> Result<()> {
    let e1_val = match data.validation() {
        Some((x, y)) => nested_objective_on(net, x, y).ok(),
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
        event: TraceEvent::Epoch,
    });
    Ok(())
}
