//! Damped Gauss-Newton steps with backtracking, shared by the W- and Z-steps.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::config::StepConfig;

/// Number of times the damping is increased before a step is given up.
const MAX_DAMPING_RETRIES: usize = 8;

#[derive(Debug, Clone)]
pub(crate) enum GnStep {
    Accepted { x: DVector<f64>, value: f64 },
    /// No tried step decreased the objective; the iterate stays where it was.
    Rejected,
}

/// Solves `(H + d I) p = -g` and backtracks along `p` until `objective` does
/// not exceed `value`. The damping `d` starts at zero and is raised in factors
/// of ten (scaled by the mean diagonal of `H`) whenever the factorization or
/// the line search fails.
pub(crate) fn damped_step<F>(
    hessian: &DMatrix<f64>,
    gradient: &DVector<f64>,
    x: &DVector<f64>,
    value: f64,
    objective: F,
    cfg: &StepConfig,
) -> GnStep
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = x.len();
    let scale = 1.0 + hessian.trace().abs() / n.max(1) as f64;
    let mut damping = 0.0;
    let attempts = if cfg.gn_damping > 0.0 { MAX_DAMPING_RETRIES + 1 } else { 1 };
    for _ in 0..attempts {
        let mut h = hessian.clone();
        if damping > 0.0 {
            for i in 0..n {
                h[(i, i)] += damping * scale;
            }
        }
        if let Some(chol) = Cholesky::new(h) {
            let dir = -chol.solve(gradient);
            if dir.iter().all(|v| v.is_finite()) {
                let mut alpha = 1.0;
                for _ in 0..=cfg.max_backtracks {
                    let cand = x + &dir * alpha;
                    let f = objective(&cand);
                    if f.is_finite() && f <= value {
                        return GnStep::Accepted { x: cand, value: f };
                    }
                    alpha *= cfg.backtrack_factor;
                }
            }
        }
        damping = if damping == 0.0 { cfg.gn_damping } else { damping * 10.0 };
    }
    GnStep::Rejected
}
