//! Penalty continuation: alternate W- and Z-steps at each penalty value and
//! raise the penalty once the stopping objective settles.

use std::time::Instant;

use super::aux::{lift_to_feasible, max_constraint_violation, AuxState};
use super::config::{PenaltySchedule, StepConfig};
use super::objective::{qp_objective_with, Penalty};
use super::wstep::{refit_block, w_step_with, BlockProblem};
use super::zstep::z_step_with;
use crate::error::{Error, Result};
use crate::model::{nested_objective_on, Dataset, NestedNet};
use crate::selection::{select_with, SelectionConfig};
use crate::trace::{RunStatus, StageSummary, TraceEvent, TraceRow, TrainTrace};

/// Final state of an auxiliary-coordinate run.
#[derive(Debug, Clone)]
pub struct MacRun {
    pub net: NestedNet,
    pub aux: AuxState,
    pub trace: TrainTrace,
}

/// State handed to an observer after every trace row.
pub struct Snapshot<'a> {
    pub net: &'a NestedNet,
    pub aux: &'a AuxState,
    pub penalty: Penalty,
    pub row: &'a TraceRow,
}

pub type Observer<'o> = &'o mut dyn FnMut(&Snapshot<'_>);

/// Trains from the feasible point obtained by lifting the coordinates from
/// a forward pass of `net`.
pub fn mac_train(net: &NestedNet, data: &Dataset, schedule: &PenaltySchedule, cfg: &StepConfig) -> Result<MacRun> {
    let aux = lift_to_feasible(net, data.inputs())?;
    drive(net.clone(), aux, data, schedule, cfg, None, None)
}

/// Trains from explicitly given auxiliary coordinates.
pub fn mac_train_from(
    net: &NestedNet,
    aux: &AuxState,
    data: &Dataset,
    schedule: &PenaltySchedule,
    cfg: &StepConfig,
) -> Result<MacRun> {
    drive(net.clone(), aux.clone(), data, schedule, cfg, None, None)
}

/// Like [`mac_train_from`], calling `observer` after every trace row.
pub fn mac_train_observed(
    net: &NestedNet,
    aux: &AuxState,
    data: &Dataset,
    schedule: &PenaltySchedule,
    cfg: &StepConfig,
    observer: Observer<'_>,
) -> Result<MacRun> {
    drive(net.clone(), aux.clone(), data, schedule, cfg, None, Some(observer))
}

struct Recorder<'a, 'o> {
    data: &'a Dataset,
    start: Instant,
    trace: TrainTrace,
    observer: Option<Observer<'o>>,
}

impl Recorder<'_, '_> {
    /// Appends a row and returns the stopping objective it recorded.
    fn record(
        &mut self,
        event: TraceEvent,
        net: &NestedNet,
        aux: &AuxState,
        pen: Penalty,
        eq: Option<f64>,
    ) -> Result<f64> {
        let d = self.data;
        let e1_train = nested_objective_on(net, d.inputs(), d.targets())?;
        let e1_val = match d.validation() {
            Some((x, y)) => Some(nested_objective_on(net, x, y)?),
            None => None,
        };
        let eq = match eq {
            Some(v) => v,
            None => qp_objective_with(net, aux, d, pen)?,
        };
        let viol = max_constraint_violation(net, aux, d.inputs())?;
        let row = TraceRow {
            iter: self.trace.next_iter(),
            seconds: self.start.elapsed().as_secs_f64(),
            mu: Some(pen.mu),
            e1_train,
            e1_val,
            eq: Some(eq),
            constraint_viol: Some(viol),
            event,
        };
        if let Some(obs) = self.observer.as_mut() {
            obs(&Snapshot {
                net,
                aux,
                penalty: pen,
                row: &row,
            });
        }
        self.trace.rows.push(row);
        Ok(e1_val.unwrap_or(e1_train))
    }

    fn out_of_time(&self, schedule: &PenaltySchedule) -> bool {
        schedule
            .max_seconds
            .is_some_and(|s| self.start.elapsed().as_secs_f64() >= s)
    }
}

/// Stops on non-finite values with the last finite state; other errors propagate.
fn settle<T>(r: Result<T>, trace: &mut TrainTrace) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::NonFinite(msg)) => {
            trace.status = RunStatus::Aborted(msg);
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

pub(crate) fn drive(
    mut net: NestedNet,
    mut aux: AuxState,
    data: &Dataset,
    schedule: &PenaltySchedule,
    cfg: &StepConfig,
    selection: Option<&SelectionConfig>,
    observer: Option<Observer<'_>>,
) -> Result<MacRun> {
    schedule.validate()?;
    cfg.validate()?;
    if let Some(sel) = selection {
        sel.validate()?;
    }
    super::objective::check(&net, &aux, data)?;
    let mut rec = Recorder {
        data,
        start: Instant::now(),
        trace: TrainTrace::default(),
        observer,
    };
    let mut total_iters = 0usize;

    'stages: for stage in 0..schedule.max_stages {
        let pen = schedule.penalty(stage);
        let Some(mut prev) = settle(rec.record(TraceEvent::MuIncrease, &net, &aux, pen, None), &mut rec.trace)? else {
            break;
        };
        let mut best: Option<(NestedNet, AuxState, f64)> = None;
        let mut current = prev;
        let mut iterations = 0;
        for _ in 0..schedule.max_iters_per_stage {
            if rec.out_of_time(schedule) {
                rec.trace.status = RunStatus::BudgetExhausted;
                break;
            }
            let Some(w) = settle(w_step_with(&net, &aux, data, pen, cfg), &mut rec.trace)? else {
                break 'stages;
            };
            net = w.value;
            if settle(rec.record(TraceEvent::WStep, &net, &aux, pen, Some(w.eq_after)), &mut rec.trace)?.is_none() {
                break 'stages;
            }
            let Some(z) = settle(z_step_with(&net, &aux, data, pen, cfg), &mut rec.trace)? else {
                break 'stages;
            };
            aux = z.value;
            let Some(metric) = settle(rec.record(TraceEvent::ZStep, &net, &aux, pen, Some(z.eq_after)), &mut rec.trace)?
            else {
                break 'stages;
            };
            iterations += 1;
            total_iters += 1;
            current = metric;
            if best.as_ref().is_none_or(|b| metric < b.2) {
                best = Some((net.clone(), aux.clone(), metric));
            }
            let stop = metric > prev || (prev - metric).abs() / prev.abs().max(1.0) < schedule.stage_tolerance;
            prev = metric;

            if let Some(sel) = selection {
                if total_iters % sel.cadence == 0 {
                    let (next, mut record) = select_with(&net, &aux, data, pen, cfg, sel)?;
                    net = next;
                    record.iter = rec.trace.next_iter();
                    rec.trace.selections.push(record);
                    let Some(m) = settle(rec.record(TraceEvent::ModelSelect, &net, &aux, pen, None), &mut rec.trace)?
                    else {
                        break 'stages;
                    };
                    // Earlier iterates may have other sizes; only the selected model competes from here.
                    best = Some((net.clone(), aux.clone(), m));
                    prev = m;
                    current = m;
                }
            }
            if stop {
                break;
            }
        }
        if let Some((bn, ba, be)) = best {
            if be < current {
                net = bn;
                aux = ba;
                current = be;
            }
        }
        let max_residual = max_constraint_violation(&net, &aux, data.inputs())?;
        rec.trace.stages.push(StageSummary {
            mu: pen.mu,
            iterations,
            e1: current,
            max_residual,
        });
        if rec.trace.status != RunStatus::Completed {
            break;
        }
    }
    Ok(MacRun {
        net,
        aux,
        trace: rec.trace,
    })
}

/// Replaces the coordinates by a forward pass, keeps every block but the
/// last and refits the last block to map the resulting features onto the
/// targets. The nested objective on the training split never increases.
pub fn postprocess(net: &NestedNet, data: &Dataset, cfg: &StepConfig) -> Result<NestedNet> {
    let before = nested_objective_on(net, data.inputs(), data.targets())?;
    let ranges = net.blocks();
    let last = ranges[ranges.len() - 1].clone();
    let feats = net.apply_range_batch(0..last.start, data.inputs());
    let p = BlockProblem {
        input: &feats,
        target: data.targets(),
        weight: 1.0,
        transient: 0.0,
    };
    let updates = refit_block(net, last, &p, cfg)?;
    let mut layers = net.clone().into_layers();
    for (k, l) in updates {
        layers[k] = l;
    }
    let next = NestedNet::new(layers, net.placement().to_vec())?;
    match nested_objective_on(&next, data.inputs(), data.targets()) {
        Ok(after) if after <= before => Ok(next),
        _ => Ok(net.clone()),
    }
}
