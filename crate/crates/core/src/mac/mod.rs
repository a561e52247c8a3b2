//! Training by auxiliary coordinates with a quadratic penalty.
//!
//! Hidden activations at the placed boundaries become free variables `Z`
//! tied to the layers through a penalty `mu/2 |z - g(z_prev)|^2`. Training
//! alternates a W-step (blocks refit independently) and a Z-step (points
//! refit independently) while `mu` grows.

mod aux;
mod config;
mod gauss_newton;
mod objective;
mod train;
mod wstep;
mod zstep;

pub use aux::{constraint_residuals, lift_to_feasible, max_constraint_violation, multiplier_estimates, AuxState};
pub use config::{CenterFit, PenaltySchedule, StepConfig};
pub use objective::{qp_gradient, qp_objective, qp_objective_with, Penalty, QpGradient};
pub use train::{mac_train, mac_train_from, mac_train_observed, postprocess, MacRun, Observer, Snapshot};
pub use wstep::w_step;
pub use zstep::z_step;

pub(crate) use train::drive;
pub(crate) use wstep::{
    block_objective, block_problems, classify, fit_centers, refit_block, BlockProblem, BlockShape,
    RbfBlock,
};
