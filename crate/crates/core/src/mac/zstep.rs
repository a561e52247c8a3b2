//! Z-step: with the weights fixed the penalized objective separates over
//! points, and each point's coordinates are refit by Gauss-Newton.

use nalgebra::{DMatrix, DVector};

use super::aux::AuxState;
use super::config::StepConfig;
use super::gauss_newton::{damped_step, GnStep};
use super::objective::{check, point_term, qp_objective_with, split_flat, Penalty};
use super::wstep::StepOutcome;
use crate::error::{config_err, Result};
use crate::linalg::row;
use crate::model::{Dataset, NestedNet};
use crate::parallel::try_parallel_map;

/// One Z-step at penalty `mu` without transient weight decay.
pub fn z_step(net: &NestedNet, aux: &AuxState, data: &Dataset, mu: f64, cfg: &StepConfig) -> Result<AuxState> {
    Ok(z_step_with(net, aux, data, Penalty::new(mu), cfg)?.value)
}

pub(crate) fn z_step_with(
    net: &NestedNet,
    aux: &AuxState,
    data: &Dataset,
    pen: Penalty,
    cfg: &StepConfig,
) -> Result<StepOutcome<AuxState>> {
    cfg.validate()?;
    pen.check()?;
    if pen.mu <= 0.0 {
        return config_err("a Z-step needs a positive penalty");
    }
    check(net, aux, data)?;
    let eq_before = qp_objective_with(net, aux, data, pen)?;
    if aux.blocks().is_empty() {
        return Ok(StepOutcome {
            value: aux.clone(),
            eq_after: eq_before,
        });
    }
    let widths = aux.widths();
    let points = try_parallel_map(data.len(), cfg.parallel.point_workers(), |n| {
        Ok(solve_point(
            net,
            &widths,
            &row(data.inputs(), n),
            &row(data.targets(), n),
            aux.point_flat(n),
            pen.mu,
            cfg,
        ))
    })?;
    let next = AuxState::from_points(&widths, &points)?;
    let eq_after = qp_objective_with(net, &next, data, pen)?;
    if eq_after <= eq_before {
        Ok(StepOutcome { value: next, eq_after })
    } else {
        log::debug!("Z-step rejected: objective {eq_before} -> {eq_after}");
        Ok(StepOutcome {
            value: aux.clone(),
            eq_after: eq_before,
        })
    }
}

/// Output of `range` at `input` with its Jacobian with respect to `input`.
fn block_with_jacobian(
    net: &NestedNet,
    range: std::ops::Range<usize>,
    input: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let mut a = input.clone();
    let mut jac = DMatrix::<f64>::identity(input.len(), input.len());
    for layer in &net.layers()[range] {
        let lj = layer.jacobians(&a);
        jac = lj.input * jac;
        a = lj.output;
    }
    (a, jac)
}

/// Gauss-Newton on the coordinates of one point. The residual stacks
/// `sqrt(mu) (z_j - g_j(z_{j-1}))` for every block and `g_last(z_J) - y`, so
/// the normal matrix is block tridiagonal and is assembled block by block.
fn solve_point(
    net: &NestedNet,
    widths: &[usize],
    x: &DVector<f64>,
    y: &DVector<f64>,
    mut z: DVector<f64>,
    mu: f64,
    cfg: &StepConfig,
) -> DVector<f64> {
    let objective = |z: &DVector<f64>| point_term(net, &split_flat(z, widths), x, y, mu);
    let blocks = net.blocks();
    let nb = widths.len();
    let nz = z.len();
    let offsets: Vec<usize> = widths
        .iter()
        .scan(0, |acc, &w| {
            let o = *acc;
            *acc += w;
            Some(o)
        })
        .collect();
    let mut f = objective(&z);
    for _ in 0..cfg.z_gn_iters {
        let zs = split_flat(&z, widths);
        // Constraint residuals z_j - g_j and Jacobians of g_j for j >= 1.
        let mut res = Vec::with_capacity(nb);
        let mut jacs = Vec::with_capacity(nb);
        for (j, zj) in zs.iter().enumerate() {
            if j == 0 {
                res.push(zj - net.apply_range(blocks[0].clone(), x));
                jacs.push(DMatrix::zeros(0, 0));
            } else {
                let (g, gj) = block_with_jacobian(net, blocks[j].clone(), &zs[j - 1]);
                res.push(zj - g);
                jacs.push(gj);
            }
        }
        let (out, jo) = block_with_jacobian(net, blocks[nb].clone(), &zs[nb - 1]);
        let out_res = out - y;

        let mut h = DMatrix::<f64>::zeros(nz, nz);
        let mut g = DVector::<f64>::zeros(nz);
        for j in 0..nb {
            let (o, w) = (offsets[j], widths[j]);
            let mut gj = &res[j] * mu;
            let mut hjj = DMatrix::<f64>::identity(w, w) * mu;
            if j + 1 < nb {
                let next = &jacs[j + 1];
                gj -= next.tr_mul(&res[j + 1]) * mu;
                hjj += next.tr_mul(next) * mu;
                let off = next.transpose() * -mu;
                h.view_mut((o, offsets[j + 1]), (w, widths[j + 1])).copy_from(&off);
                h.view_mut((offsets[j + 1], o), (widths[j + 1], w)).copy_from(&off.transpose());
            } else {
                gj += jo.tr_mul(&out_res);
                hjj += jo.tr_mul(&jo);
            }
            g.rows_mut(o, w).copy_from(&gj);
            h.view_mut((o, o), (w, w)).copy_from(&hjj);
        }
        if g.iter().all(|v| *v == 0.0) {
            break;
        }
        match damped_step(&h, &g, &z, f, objective, cfg) {
            GnStep::Accepted { x: next, value } => {
                z = next;
                f = value;
            }
            GnStep::Rejected => break,
        }
    }
    z
}
