//! Learning-curve records produced by every trainer.

use std::fmt::Write as _;

/// Header of the CSV written by [`TrainTrace::to_csv`].
pub const TRACE_HEADER: &str = "iter,seconds,mu,e1_train,e1_val,eq,constraint_viol,event";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    WStep,
    ZStep,
    MuIncrease,
    Postprocess,
    ModelSelect,
    /// End of an SGD epoch.
    Epoch,
    /// One iteration of a baseline that has no W/Z split.
    Iteration,
}

impl TraceEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceEvent::WStep => "wstep",
            TraceEvent::ZStep => "zstep",
            TraceEvent::MuIncrease => "mu_increase",
            TraceEvent::Postprocess => "postprocess",
            TraceEvent::ModelSelect => "model_select",
            TraceEvent::Epoch => "epoch",
            TraceEvent::Iteration => "iter",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "wstep" => TraceEvent::WStep,
            "zstep" => TraceEvent::ZStep,
            "mu_increase" => TraceEvent::MuIncrease,
            "postprocess" => TraceEvent::Postprocess,
            "model_select" => TraceEvent::ModelSelect,
            "epoch" => TraceEvent::Epoch,
            "iter" => TraceEvent::Iteration,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub seconds: f64,
    pub mu: Option<f64>,
    pub e1_train: f64,
    pub e1_val: Option<f64>,
    pub eq: Option<f64>,
    pub constraint_viol: Option<f64>,
    pub event: TraceEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    /// Stopped by the wall-clock budget.
    BudgetExhausted,
    /// The objective grew past the divergence threshold.
    Diverged,
    /// A non-finite value appeared; the returned model is the last finite one.
    Aborted(String),
}

/// Summary of one penalty stage of an auxiliary-coordinate run.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSummary {
    pub mu: f64,
    pub iterations: usize,
    /// Stopping-split objective of the iterate kept at the end of the stage.
    pub e1: f64,
    /// Largest constraint residual of that iterate.
    pub max_residual: f64,
}

/// One model-selection step.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRecord {
    pub iter: usize,
    pub mu: f64,
    /// Hidden sizes of the selectable blocks before and after the step.
    pub sizes_before: Vec<usize>,
    pub sizes_after: Vec<usize>,
    /// Penalized objective plus complexity cost before and after.
    pub objective_before: f64,
    pub objective_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
    pub stages: Vec<StageSummary>,
    pub selections: Vec<SelectionRecord>,
    pub status: RunStatus,
}

impl Default for TrainTrace {
    fn default() -> Self {
        Self {
            rows: Vec::new(),
            stages: Vec::new(),
            selections: Vec::new(),
            status: RunStatus::Completed,
        }
    }
}

impl TrainTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn next_iter(&self) -> usize {
        self.rows.last().map_or(0, |r| r.iter + 1)
    }

    /// Renders the trace as CSV. With `with_seconds` unset the seconds column
    /// is written as 0 so that repeated runs produce identical files.
    pub fn to_csv(&self, with_seconds: bool) -> String {
        let mut s = String::with_capacity(64 * (self.rows.len() + 1));
        s.push_str(TRACE_HEADER);
        s.push('\n');
        for r in &self.rows {
            let secs = if with_seconds { r.seconds } else { 0.0 };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.iter,
                secs,
                opt(r.mu),
                r.e1_train,
                opt(r.e1_val),
                opt(r.eq),
                opt(r.constraint_viol),
                r.event.as_str()
            );
        }
        s
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}
