use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::parallel::ParallelConfig;

/// How the centers of a Gaussian RBF layer are refit during a W-step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum CenterFit {
    KMeans { iters: usize },
    RandomSubset,
}

impl Default for CenterFit {
    fn default() -> Self {
        CenterFit::KMeans { iters: 30 }
    }
}

/// Settings shared by the W-step and the Z-step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepConfig {
    /// Gauss-Newton iterations per nonlinear unit in a W-step.
    pub w_gn_iters: usize,
    /// Gauss-Newton iterations per point in a Z-step.
    pub z_gn_iters: usize,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    /// Relative diagonal damping added when an undamped Gauss-Newton step fails.
    pub gn_damping: f64,
    pub center_fit: CenterFit,
    pub seed: u64,
    /// Not read from configuration files; callers set it from their own
    /// parallel settings.
    #[serde(skip)]
    pub parallel: ParallelConfig,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            w_gn_iters: 3,
            z_gn_iters: 1,
            backtrack_factor: 0.5,
            max_backtracks: 20,
            gn_damping: 1e-8,
            center_fit: CenterFit::default(),
            seed: 0,
            parallel: ParallelConfig::default(),
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return config_err(format!("backtrack_factor must lie in (0, 1), got {}", self.backtrack_factor));
        }
        if !(self.gn_damping.is_finite() && self.gn_damping >= 0.0) {
            return config_err("gn_damping must be finite and nonnegative");
        }
        if self.parallel.workers == 0 {
            return config_err("workers must be at least 1");
        }
        Ok(())
    }

    /// Seed used when refitting the centers of layer `layer`.
    pub(crate) fn layer_seed(&self, layer: usize) -> u64 {
        self.seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(layer as u64 + 1)
    }
}

/// Penalty continuation schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltySchedule {
    pub mu0: f64,
    pub growth: f64,
    /// A stage ends when the relative change of the stopping objective drops below this.
    pub stage_tolerance: f64,
    pub max_stages: usize,
    /// Transient weight decay is dropped once the penalty exceeds this value.
    pub reg_drop_threshold: f64,
    pub transient_reg: f64,
    pub max_iters_per_stage: usize,
    /// Wall-clock budget for the whole run.
    pub max_seconds: Option<f64>,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self {
            mu0: 1.0,
            growth: 10.0,
            stage_tolerance: 1e-2,
            max_stages: 9,
            reg_drop_threshold: 1e4,
            transient_reg: 1e-4,
            max_iters_per_stage: 50,
            max_seconds: None,
        }
    }
}

impl PenaltySchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu0.is_finite() && self.mu0 > 0.0) {
            return config_err(format!("mu0 must be positive, got {}", self.mu0));
        }
        if !(self.growth.is_finite() && self.growth > 1.0) {
            return config_err(format!("growth must exceed 1, got {}", self.growth));
        }
        if !(self.stage_tolerance.is_finite() && self.stage_tolerance >= 0.0) {
            return config_err("stage_tolerance must be finite and nonnegative");
        }
        if !(self.transient_reg.is_finite() && self.transient_reg >= 0.0) {
            return config_err("transient_reg must be finite and nonnegative");
        }
        if self.max_iters_per_stage == 0 {
            return config_err("max_iters_per_stage must be at least 1");
        }
        if let Some(s) = self.max_seconds {
            if !(s > 0.0) {
                return config_err("max_seconds must be positive");
            }
        }
        Ok(())
    }

    /// Penalty at stage `stage` (0-based) with its transient weight decay.
    pub fn penalty(&self, stage: usize) -> super::Penalty {
        let mu = self.mu0 * self.growth.powi(stage as i32);
        super::Penalty {
            mu,
            transient_reg: if mu > self.reg_drop_threshold { 0.0 } else { self.transient_reg },
        }
    }
}
