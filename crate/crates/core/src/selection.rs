//! Choosing the number of basis functions of RBF blocks during training.
//!
//! The criterion adds `2 eps^2 |W|` to the penalized objective. Because that
//! objective separates over blocks once the coordinates are fixed, each RBF
//! block picks its size on its own.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, Result};
use crate::mac::{
    block_objective, block_problems, classify, fit_centers, qp_objective_with, AuxState, BlockShape, MacRun,
    PenaltySchedule, Penalty, RbfBlock, StepConfig,
};
use crate::model::{squared_error, Dataset, NestedNet};
use crate::parallel::try_parallel_map;
use crate::trace::SelectionRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Candidate numbers of basis functions, one list per selectable block.
    pub candidates: Vec<Vec<usize>>,
    /// Estimated noise variance of the targets.
    pub epsilon_sq: f64,
    /// Run a selection step after every `cadence` W/Z iterations.
    pub cadence: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            candidates: Vec::new(),
            epsilon_sq: 0.05,
            cadence: 10,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cadence == 0 {
            return config_err("selection cadence must be at least 1");
        }
        if !(self.epsilon_sq.is_finite() && self.epsilon_sq >= 0.0) {
            return config_err("epsilon_sq must be finite and nonnegative");
        }
        if self.candidates.iter().any(|c| c.is_empty() || c.contains(&0)) {
            return config_err("every candidate list must be nonempty and positive");
        }
        Ok(())
    }
}

/// Complexity cost `2 eps^2 |W|` over all weights of `net`.
pub fn aic_cost(net: &NestedNet, epsilon_sq: f64) -> f64 {
    2.0 * epsilon_sq * net.param_count() as f64
}

/// Block indices whose hidden size can change without touching the
/// auxiliary coordinates: an RBF layer followed by a linear readout.
pub fn selectable_blocks(net: &NestedNet) -> Vec<usize> {
    net.blocks()
        .iter()
        .enumerate()
        .filter(|(_, r)| matches!(classify(net, r), BlockShape::Rbf { readout: Some(_), .. }))
        .map(|(j, _)| j)
        .collect()
}

/// Number of basis functions of each selectable block.
pub fn selectable_sizes(net: &NestedNet) -> Vec<usize> {
    let ranges = net.blocks();
    selectable_blocks(net)
        .into_iter()
        .map(|j| net.layer(ranges[j].start).spec().out_dim)
        .collect()
}

/// Training-set noise estimate `sum |y - f(x)|^2 / (N D')` of a fitted model.
pub fn estimate_epsilon_sq(net: &NestedNet, data: &Dataset) -> Result<f64> {
    let sse = squared_error(net, data.inputs(), data.targets())?;
    Ok(sse / (data.len() * data.output_dim()) as f64)
}

/// One selection step at penalty `mu` with the coordinates held fixed.
pub fn selection_step(
    net: &NestedNet,
    aux: &AuxState,
    data: &Dataset,
    mu: f64,
    cfg: &StepConfig,
    sel: &SelectionConfig,
) -> Result<(NestedNet, SelectionRecord)> {
    select_with(net, aux, data, Penalty::new(mu), cfg, sel)
}

pub(crate) fn select_with(
    net: &NestedNet,
    aux: &AuxState,
    data: &Dataset,
    pen: Penalty,
    cfg: &StepConfig,
    sel: &SelectionConfig,
) -> Result<(NestedNet, SelectionRecord)> {
    sel.validate()?;
    let blocks = selectable_blocks(net);
    if sel.candidates.len() != blocks.len() {
        return dim_err(format!(
            "{} candidate lists for {} selectable blocks",
            sel.candidates.len(),
            blocks.len()
        ));
    }
    let ranges = net.blocks();
    let problems = block_problems(net, aux, data, pen);
    let two_eps = 2.0 * sel.epsilon_sq;
    let before = qp_objective_with(net, aux, data, pen)? + aic_cost(net, sel.epsilon_sq);

    let mut tasks = Vec::new();
    for (b, cands) in sel.candidates.iter().enumerate() {
        let mut sorted = cands.clone();
        sorted.sort_unstable();
        sorted.dedup();
        tasks.extend(sorted.into_iter().map(|m| (b, m)));
    }
    let fits = try_parallel_map(tasks.len(), cfg.parallel.candidate_workers(), |t| {
        let (b, m) = tasks[t];
        let j = blocks[b];
        let rbf = ranges[j].start;
        let p = &problems[j];
        if m > p.input.nrows() {
            return config_err(format!("{m} basis functions requested for {} points", p.input.nrows()));
        }
        let centers = fit_centers(p.input, m, cfg.layer_seed(rbf), &cfg.center_fit)?;
        let fit = RbfBlock::from_net(net, rbf, Some(rbf + 1)).refit(p, centers)?;
        let params = fit.rbf.spec().param_count() + fit.readout.as_ref().map_or(0, |l| l.spec().param_count());
        let score = fit.objective + two_eps * params as f64;
        Ok((b, score, fit))
    })?;

    let mut layers = net.clone().into_layers();
    let mut chosen: Vec<Option<(f64, _)>> = (0..blocks.len()).map(|_| None).collect();
    for (b, score, fit) in fits {
        // Candidates arrive in increasing size, so strict comparison keeps the smaller on ties.
        if chosen[b].as_ref().is_none_or(|(s, _)| score < *s) {
            chosen[b] = Some((score, fit));
        }
    }
    for (b, choice) in chosen.into_iter().enumerate() {
        let j = blocks[b];
        let range = ranges[j].clone();
        let current = &net.layers()[range.clone()];
        let params: usize = current.iter().map(|l| l.spec().param_count()).sum();
        let current_score = block_objective(current, &problems[j]) + two_eps * params as f64;
        if let Some((score, fit)) = choice {
            if score < current_score {
                for (k, l) in fit.into_layers(range.start) {
                    layers[k] = l;
                }
            }
        }
    }
    let candidate = NestedNet::new(layers, net.placement().to_vec())?;
    let after = qp_objective_with(&candidate, aux, data, pen)? + aic_cost(&candidate, sel.epsilon_sq);
    let (next, after) = if after <= before {
        (candidate, after)
    } else {
        (net.clone(), before)
    };
    let record = SelectionRecord {
        iter: 0,
        mu: pen.mu,
        sizes_before: selectable_sizes(net),
        sizes_after: selectable_sizes(&next),
        objective_before: before,
        objective_after: after,
    };
    Ok((next, record))
}

/// Auxiliary-coordinate training with a selection step every `sel.cadence`
/// iterations. Without selectable blocks this is plain training.
pub fn mac_train_with_selection(
    net: &NestedNet,
    aux: &AuxState,
    data: &Dataset,
    schedule: &PenaltySchedule,
    cfg: &StepConfig,
    sel: &SelectionConfig,
) -> Result<MacRun> {
    crate::mac::drive(net.clone(), aux.clone(), data, schedule, cfg, Some(sel), None)
}
