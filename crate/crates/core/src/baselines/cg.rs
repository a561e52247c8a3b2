use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::model::{backprop_gradient, nested_objective, nested_objective_on, Dataset, NestedNet};
use crate::trace::{RunStatus, TraceEvent, TraceRow, TrainTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineSearch {
    /// Halve the step until the Armijo condition holds. Cheap, but it cannot
    /// resolve decreases below the roundoff of the objective.
    Backtracking,
    /// Strong Wolfe search with cubic interpolation and extrapolation.
    #[default]
    CubicInterpolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CgConfig {
    pub max_iters: usize,
    /// The direction is reset to steepest descent every this many iterations.
    pub restart_every: usize,
    pub line_search: LineSearch,
    /// Stop once the gradient norm falls to this value.
    pub grad_tol: f64,
    /// Emit a trace row every this many iterations.
    pub trace_every: usize,
    pub max_seconds: Option<f64>,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            restart_every: 100,
            line_search: LineSearch::CubicInterpolation,
            grad_tol: 1e-8,
            trace_every: 1,
            max_seconds: None,
        }
    }
}

impl CgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restart_every == 0 || self.trace_every == 0 {
            return config_err("restart_every and trace_every must be at least 1");
        }
        if !(self.grad_tol.is_finite() && self.grad_tol >= 0.0) {
            return config_err("grad_tol must be finite and nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
    Stopped,
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub status: CgStatus,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.1;
const EXTRAPOLATE: f64 = 3.0;
const MAX_EVALS: usize = 40;
const ROUNDOFF: f64 = 1e-13;

#[derive(Clone)]
struct Probe {
    alpha: f64,
    f: f64,
    g: DVector<f64>,
    slope: f64,
}

/// Polak-Ribiere nonlinear conjugate gradients. `objective` returns the value
/// and gradient; `after_iter(k, value, x)` is called after every iteration and
/// stops the run by returning `false`. The objective never increases between
/// iterations.
pub fn minimize_cg<F, C>(mut objective: F, x0: DVector<f64>, cfg: &CgConfig, mut after_iter: C) -> Result<CgOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
    C: FnMut(usize, f64, &DVector<f64>) -> bool,
{
    cfg.validate()?;
    let mut x = x0;
    let (mut f, mut g) = objective(&x)?;
    if !f.is_finite() {
        return Err(Error::NonFinite("objective at the starting point".into()));
    }
    let mut d = -&g;
    // Step, slope and decrease of the previous iteration, for the initial step guess.
    let mut prev: Option<(f64, f64, f64)> = None;
    let mut since_restart = 0;
    let mut k = 0;
    let mut status = CgStatus::MaxIterations;
    while k < cfg.max_iters {
        if g.norm() <= cfg.grad_tol {
            status = CgStatus::Converged;
            break;
        }
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            d = -&g;
            slope = g.dot(&d);
            since_restart = 0;
        }
        // The larger of the slope-ratio and the interpolated guess; the latter
        // collapses once decreases reach roundoff.
        let a0 = match prev {
            Some((alpha, prev_slope, drop)) => (alpha * prev_slope / slope)
                .max(2.0 * drop / -slope)
                .clamp(1e-20, 1e20),
            None => (1.0 / g.norm()).min(1.0),
        };
        let found = search(&mut objective, &x, &d, f, slope, a0, cfg.line_search);
        let Some(p) = found else {
            if since_restart == 0 {
                status = CgStatus::LineSearchFailed;
                break;
            }
            d = -&g;
            since_restart = 0;
            prev = None;
            continue;
        };
        x += &d * p.alpha;
        let mut beta = p.g.dot(&(&p.g - &g)) / g.norm_squared();
        since_restart += 1;
        if since_restart >= cfg.restart_every || !(beta > 0.0) {
            beta = 0.0;
            since_restart = 0;
        }
        prev = Some((p.alpha, slope, f - p.f));
        f = p.f;
        d = &d * beta - &p.g;
        g = p.g;
        k += 1;
        if !after_iter(k, f, &x) {
            status = CgStatus::Stopped;
            break;
        }
    }
    if status == CgStatus::MaxIterations && g.norm() <= cfg.grad_tol {
        status = CgStatus::Converged;
    }
    Ok(CgOutcome {
        grad_norm: g.norm(),
        x,
        value: f,
        iterations: k,
        status,
    })
}

fn probe<F>(objective: &mut F, x: &DVector<f64>, d: &DVector<f64>, alpha: f64) -> Option<Probe>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    match objective(&(x + d * alpha)) {
        Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => {
            let slope = g.dot(d);
            Some(Probe { alpha, f, g, slope })
        }
        _ => None,
    }
}

fn search<F>(
    objective: &mut F,
    x: &DVector<f64>,
    d: &DVector<f64>,
    f0: f64,
    slope0: f64,
    a0: f64,
    kind: LineSearch,
) -> Option<Probe>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    match kind {
        LineSearch::Backtracking => {
            let mut alpha = a0;
            for _ in 0..MAX_EVALS {
                if let Some(p) = probe(objective, x, d, alpha) {
                    if p.f <= f0 + C1 * alpha * slope0 && p.f < f0 {
                        return Some(p);
                    }
                    // Decreases below roundoff are judged by the slope instead.
                    let flat = p.f <= f0 && f0 - p.f <= ROUNDOFF * f0.abs();
                    if flat && p.slope.abs() <= 0.5 * slope0.abs() {
                        return Some(p);
                    }
                }
                alpha *= 0.5;
            }
            None
        }
        LineSearch::CubicInterpolation => wolfe(objective, x, d, f0, slope0, a0),
    }
}

/// Minimizer of the cubic matching values and slopes at `a` and `b`.
fn cubic_min(a: &Probe, b: &Probe) -> Option<f64> {
    let d1 = a.slope + b.slope - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    t.is_finite().then_some(t)
}

fn wolfe<F>(objective: &mut F, x: &DVector<f64>, d: &DVector<f64>, f0: f64, slope0: f64, a0: f64) -> Option<Probe>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let origin = Probe {
        alpha: 0.0,
        f: f0,
        g: DVector::zeros(0),
        slope: slope0,
    };
    let mut prev = origin.clone();
    let mut alpha = a0;
    for i in 0..MAX_EVALS {
        let Some(cur) = probe(objective, x, d, alpha) else {
            alpha = prev.alpha + 0.5 * (alpha - prev.alpha);
            continue;
        };
        if cur.f > f0 + C1 * alpha * slope0 || (i > 0 && cur.f >= prev.f) {
            return zoom(objective, x, d, f0, slope0, prev, cur);
        }
        if cur.slope.abs() <= -C2 * slope0 {
            return Some(refine(objective, x, d, f0, slope0, &prev, cur));
        }
        if cur.slope >= 0.0 {
            return zoom(objective, x, d, f0, slope0, cur, prev);
        }
        let lo = alpha * 1.01;
        let hi = alpha * EXTRAPOLATE;
        let next = cubic_min(&prev, &cur).filter(|t| *t > alpha).unwrap_or(hi).clamp(lo, hi);
        prev = cur;
        alpha = next;
    }
    (prev.alpha > 0.0 && prev.f < f0).then_some(prev)
}

/// One more probe at the cubic minimizer through `prev` and an accepted
/// point. On a quadratic this lands on the exact line minimum, which keeps
/// the directions conjugate.
fn refine<F>(objective: &mut F, x: &DVector<f64>, d: &DVector<f64>, f0: f64, slope0: f64, prev: &Probe, cur: Probe) -> Probe
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let Some(t) = cubic_min(prev, &cur).filter(|t| *t > 0.0 && *t <= EXTRAPOLATE * cur.alpha) else {
        return cur;
    };
    if (t - cur.alpha).abs() <= 1e-12 * cur.alpha {
        return cur;
    }
    match probe(objective, x, d, t) {
        Some(p) if p.f < cur.f && p.f <= f0 + C1 * t * slope0 && p.slope.abs() <= cur.slope.abs() => p,
        _ => cur,
    }
}

/// Shrinks `[lo, hi]` (as step sizes, either order) until a strong Wolfe
/// point is found. `lo` always satisfies sufficient decrease.
#[allow(clippy::too_many_arguments)]
fn zoom<F>(
    objective: &mut F,
    x: &DVector<f64>,
    d: &DVector<f64>,
    f0: f64,
    slope0: f64,
    mut lo: Probe,
    mut hi: Probe,
) -> Option<Probe>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    for _ in 0..MAX_EVALS {
        let (l, u) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        let margin = 0.01 * (u - l);
        let t = cubic_min(&lo, &hi)
            .filter(|t| *t > l + margin && *t < u - margin)
            .unwrap_or(0.5 * (l + u));
        if !(u - l > f64::EPSILON * u.max(1e-300)) {
            break;
        }
        let Some(p) = probe(objective, x, d, t) else {
            hi = Probe {
                alpha: t,
                f: f64::INFINITY,
                g: DVector::zeros(0),
                slope: f64::NAN,
            };
            continue;
        };
        if p.f > f0 + C1 * t * slope0 || p.f >= lo.f {
            hi = p;
        } else {
            if p.slope.abs() <= -C2 * slope0 {
                return Some(p);
            }
            if p.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
    }
    (lo.alpha > 0.0 && lo.f < f0).then_some(lo)
}

/// Trains all weights of `net` on the nested objective with nonlinear
/// conjugate gradients.
pub fn cg_train(net: &NestedNet, data: &Dataset, cfg: &CgConfig) -> Result<(NestedNet, TrainTrace)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut trace = TrainTrace::default();
    let template = net.clone();
    let row = |trace: &mut TrainTrace, net: &NestedNet, e1: f64| -> Result<()> {
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
    };
    let e0 = nested_objective(net, data)?;
    row(&mut trace, net, e0)?;

    let mut budget_hit = false;
    let mut row_err = None;
    let mut scratch = template.clone();
    let mut tracer = template.clone();
    let objective = |w: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        scratch.set_flat(w)?;
        let f = nested_objective(&scratch, data)?;
        let g = backprop_gradient(&scratch, data)?;
        Ok((f, scratch.flatten_like(&g)))
    };
    let after = |k: usize, f: f64, x: &DVector<f64>| {
        if k % cfg.trace_every == 0 {
            if let Err(e) = tracer.set_flat(x).and_then(|_| row(&mut trace, &tracer, f)) {
                row_err = Some(e);
                return false;
            }
        }
        if cfg.max_seconds.is_some_and(|s| start.elapsed().as_secs_f64() >= s) {
            budget_hit = true;
            return false;
        }
        true
    };
    let outcome = minimize_cg(objective, net.to_flat(), cfg, after)?;
    if let Some(e) = row_err {
        return Err(e);
    }
    let mut out = template;
    out.set_flat(&outcome.x)?;
    if outcome.iterations % cfg.trace_every != 0 {
        row(&mut trace, &out, outcome.value)?;
    }
    if budget_hit {
        trace.status = RunStatus::BudgetExhausted;
    }
    Ok((out, trace))
}
