//! W-step: refit every block against its auxiliary input and target with the
//! coordinates held fixed. Blocks are independent and so are the units of a
//! single dense layer, which is what the parallel fan-out exploits.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::aux::AuxState;
use super::config::{CenterFit, StepConfig};
use super::gauss_newton::{damped_step, GnStep};
use super::objective::{check, qp_objective_with, Penalty};
use crate::baselines::{kmeans, ridge_lsq};
use crate::error::{config_err, Result};
use crate::linalg::{frobenius_sq, with_ones};
use crate::model::{rbf_features, sigmoid, Dataset, Layer, LayerKind, NestedNet};
use crate::parallel::try_parallel_map;

/// Result of a W- or Z-step together with the objective around it.
#[derive(Debug, Clone)]
pub(crate) struct StepOutcome<T> {
    pub value: T,
    pub eq_after: f64,
}

/// One W-step at penalty `mu` without transient weight decay.
pub fn w_step(net: &NestedNet, aux: &AuxState, data: &Dataset, mu: f64, cfg: &StepConfig) -> Result<NestedNet> {
    Ok(w_step_with(net, aux, data, Penalty::new(mu), cfg)?.value)
}

/// The fitting problem of one block: map `input` rows onto `target` rows with
/// loss weight `weight` (the penalty for inner blocks, 1 for the last).
#[derive(Clone, Copy)]
pub(crate) struct BlockProblem<'a> {
    pub input: &'a DMatrix<f64>,
    pub target: &'a DMatrix<f64>,
    pub weight: f64,
    pub transient: f64,
}

impl BlockProblem<'_> {
    fn reg(&self, layer: &Layer) -> f64 {
        layer.spec().ridge + self.transient
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BlockShape {
    Sigmoid(usize),
    Linear(usize),
    Rbf { rbf: usize, readout: Option<usize> },
    Joint,
}

pub(crate) fn classify(net: &NestedNet, range: &Range<usize>) -> BlockShape {
    let kinds: Vec<LayerKind> = net.layers()[range.clone()].iter().map(|l| l.kind()).collect();
    match kinds.as_slice() {
        [LayerKind::SigmoidDense] => BlockShape::Sigmoid(range.start),
        [LayerKind::LinearDense] => BlockShape::Linear(range.start),
        [LayerKind::GaussianRbf] => BlockShape::Rbf {
            rbf: range.start,
            readout: None,
        },
        [LayerKind::GaussianRbf, LayerKind::LinearDense] => BlockShape::Rbf {
            rbf: range.start,
            readout: Some(range.start + 1),
        },
        _ => BlockShape::Joint,
    }
}

/// Inputs, targets and loss weights of every block.
pub(crate) fn block_problems<'a>(
    net: &NestedNet,
    aux: &'a AuxState,
    data: &'a Dataset,
    pen: Penalty,
) -> Vec<BlockProblem<'a>> {
    let nb = net.blocks().len();
    (0..nb)
        .map(|j| BlockProblem {
            input: if j == 0 { data.inputs() } else { aux.block(j - 1) },
            target: if j + 1 == nb { data.targets() } else { aux.block(j) },
            weight: if j + 1 == nb { 1.0 } else { pen.mu },
            transient: pen.transient_reg,
        })
        .collect()
}

enum Task {
    Unit { block: usize, layer: usize, unit: usize },
    Whole { block: usize },
}

enum Update {
    Row { layer: usize, unit: usize, row: DVector<f64> },
    Layers(Vec<(usize, Layer)>),
}

pub(crate) fn w_step_with(
    net: &NestedNet,
    aux: &AuxState,
    data: &Dataset,
    pen: Penalty,
    cfg: &StepConfig,
) -> Result<StepOutcome<NestedNet>> {
    cfg.validate()?;
    pen.check()?;
    if pen.mu <= 0.0 {
        return config_err("a W-step needs a positive penalty");
    }
    check(net, aux, data)?;
    let eq_before = qp_objective_with(net, aux, data, pen)?;
    let ranges = net.blocks();
    let problems = block_problems(net, aux, data, pen);
    let shapes: Vec<BlockShape> = ranges.iter().map(|r| classify(net, r)).collect();

    let mut designs: Vec<Option<DMatrix<f64>>> = vec![None; ranges.len()];
    let mut tasks = Vec::new();
    for (j, shape) in shapes.iter().enumerate() {
        match *shape {
            BlockShape::Sigmoid(k) => {
                designs[j] = Some(design(problems[j].input, net.layer(k).spec().has_bias()));
                for unit in 0..net.layer(k).spec().out_dim {
                    tasks.push(Task::Unit { block: j, layer: k, unit });
                }
            }
            _ => tasks.push(Task::Whole { block: j }),
        }
    }

    let updates = try_parallel_map(tasks.len(), cfg.parallel.unit_workers(), |t| match tasks[t] {
        Task::Unit { block, layer, unit } => {
            let l = net.layer(layer);
            let p = &problems[block];
            let phi = designs[block].as_ref().expect("design built for sigmoid blocks");
            let w0 = l.weights().row(unit).transpose();
            let t = p.target.column(unit).into_owned();
            let row = fit_sigmoid_unit(phi, &t, w0, p.weight, p.reg(l), cfg);
            Ok(Update::Row { layer, unit, row })
        }
        Task::Whole { block } => Ok(Update::Layers(fit_whole(
            net,
            ranges[block].clone(),
            shapes[block],
            &problems[block],
            cfg,
        )?)),
    })?;

    let mut next = net.clone();
    let mut rows: Vec<Option<DMatrix<f64>>> = vec![None; net.layers().len()];
    for u in updates {
        match u {
            Update::Row { layer, unit, row } => {
                let w = rows[layer].get_or_insert_with(|| net.layer(layer).weights().clone());
                w.row_mut(unit).copy_from(&row.transpose());
            }
            Update::Layers(ls) => {
                let mut layers = next.into_layers();
                for (k, l) in ls {
                    layers[k] = l;
                }
                next = NestedNet::new(layers, net.placement().to_vec())?;
            }
        }
    }
    for (k, w) in rows.into_iter().enumerate() {
        if let Some(w) = w {
            next.layer_mut(k).set_weights(w)?;
        }
    }

    let eq_after = qp_objective_with(&next, aux, data, pen)?;
    if eq_after <= eq_before {
        Ok(StepOutcome { value: next, eq_after })
    } else {
        log::debug!("W-step rejected: objective {eq_before} -> {eq_after}");
        Ok(StepOutcome {
            value: net.clone(),
            eq_after: eq_before,
        })
    }
}

/// Refits the layers of one block against `p` and returns the replacements.
pub(crate) fn refit_block(
    net: &NestedNet,
    range: Range<usize>,
    p: &BlockProblem,
    cfg: &StepConfig,
) -> Result<Vec<(usize, Layer)>> {
    match classify(net, &range) {
        BlockShape::Sigmoid(k) => {
            let l = net.layer(k);
            let phi = design(p.input, l.spec().has_bias());
            let rows = try_parallel_map(l.spec().out_dim, cfg.parallel.unit_workers(), |u| {
                let t = p.target.column(u).into_owned();
                Ok(fit_sigmoid_unit(&phi, &t, l.weights().row(u).transpose(), p.weight, p.reg(l), cfg))
            })?;
            let mut w = l.weights().clone();
            for (u, r) in rows.iter().enumerate() {
                w.row_mut(u).copy_from(&r.transpose());
            }
            Ok(vec![(k, Layer::new(l.spec().clone(), w)?)])
        }
        shape => fit_whole(net, range, shape, p, cfg),
    }
}

fn fit_whole(
    net: &NestedNet,
    range: Range<usize>,
    shape: BlockShape,
    p: &BlockProblem,
    cfg: &StepConfig,
) -> Result<Vec<(usize, Layer)>> {
    Ok(match shape {
        BlockShape::Linear(k) => {
            let l = net.layer(k);
            let w = fit_linear(p, l)?;
            vec![(k, Layer::new(l.spec().clone(), w)?)]
        }
        BlockShape::Rbf { rbf, readout } => {
            let current = RbfBlock::from_net(net, rbf, readout);
            let m = current.rbf.spec().out_dim;
            let fresh = fit_centers(p.input, m, cfg.layer_seed(rbf), &cfg.center_fit)?;
            let a = current.refit(p, current.rbf.weights().clone())?;
            let b = current.refit(p, fresh)?;
            let best = if b.objective < a.objective { b } else { a };
            best.into_layers(rbf)
        }
        BlockShape::Joint => fit_joint(&net.layers()[range.clone()], p, cfg)?
            .into_iter()
            .enumerate()
            .map(|(i, l)| (range.start + i, l))
            .collect(),
        BlockShape::Sigmoid(_) => refit_block(net, range, p, cfg)?,
    })
}

fn design(input: &DMatrix<f64>, bias: bool) -> DMatrix<f64> {
    if bias {
        with_ones(input)
    } else {
        input.clone()
    }
}

/// Fits one sigmoid unit `t ~ sigmoid(phi w)` by Gauss-Newton with
/// backtracking, minimizing `weight/2 |sigmoid(phi w) - t|^2 + reg |w|^2`.
pub(crate) fn fit_sigmoid_unit(
    phi: &DMatrix<f64>,
    t: &DVector<f64>,
    mut w: DVector<f64>,
    weight: f64,
    reg: f64,
    cfg: &StepConfig,
) -> DVector<f64> {
    let objective = |w: &DVector<f64>| {
        let a = phi * w;
        let mut s = 0.0;
        for n in 0..a.len() {
            let e = sigmoid(a[n]) - t[n];
            s += e * e;
        }
        0.5 * weight * s + reg * w.norm_squared()
    };
    let mut f = objective(&w);
    for _ in 0..cfg.w_gn_iters {
        let a = phi * &w;
        let mut jd = phi.clone();
        let mut r = DVector::zeros(a.len());
        for n in 0..a.len() {
            let s = sigmoid(a[n]);
            let d = s * (1.0 - s);
            r[n] = (s - t[n]) * d;
            jd.row_mut(n).scale_mut(d);
        }
        let mut g = phi.tr_mul(&r) * weight;
        let mut h = jd.tr_mul(&jd) * weight;
        if reg > 0.0 {
            g.axpy(2.0 * reg, &w, 1.0);
            for i in 0..h.nrows() {
                h[(i, i)] += 2.0 * reg;
            }
        }
        if g.iter().all(|v| *v == 0.0) {
            break;
        }
        match damped_step(&h, &g, &w, f, objective, cfg) {
            GnStep::Accepted { x, value } => {
                let done = f - value <= 1e-14 * f.abs();
                w = x;
                f = value;
                if done {
                    break;
                }
            }
            GnStep::Rejected => break,
        }
    }
    w
}

/// Exact minimizer of `weight/2 |T - Phi W^T|^2 + reg |W|^2` for a linear layer.
fn fit_linear(p: &BlockProblem, layer: &Layer) -> Result<DMatrix<f64>> {
    let phi = design(p.input, layer.spec().has_bias());
    Ok(ridge_lsq(&phi, p.target, 2.0 * p.reg(layer) / p.weight)?.transpose())
}

/// Centers for an RBF layer with `m` basis functions placed on `points`.
pub(crate) fn fit_centers(points: &DMatrix<f64>, m: usize, seed: u64, fit: &CenterFit) -> Result<DMatrix<f64>> {
    match fit {
        CenterFit::KMeans { iters } => Ok(kmeans(points, m, seed, *iters)?.centers),
        CenterFit::RandomSubset => {
            let n = points.nrows();
            if m == 0 || m > n {
                return config_err(format!("cannot place {m} centers among {n} points"));
            }
            if m == n {
                return Ok(points.clone());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = rand::seq::index::sample(&mut rng, n, m).into_vec();
            idx.sort_unstable();
            Ok(points.select_rows(&idx))
        }
    }
}

/// An RBF layer optionally followed by its linear readout.
pub(crate) struct RbfBlock<'a> {
    pub rbf: &'a Layer,
    pub readout: Option<&'a Layer>,
}

pub(crate) struct RbfFit {
    pub rbf: Layer,
    pub readout: Option<Layer>,
    /// Block objective including both layers' regularization.
    pub objective: f64,
}

impl RbfFit {
    pub fn into_layers(self, first: usize) -> Vec<(usize, Layer)> {
        let mut out = vec![(first, self.rbf)];
        if let Some(r) = self.readout {
            out.push((first + 1, r));
        }
        out
    }
}

impl<'a> RbfBlock<'a> {
    pub fn from_net(net: &'a NestedNet, rbf: usize, readout: Option<usize>) -> Self {
        Self {
            rbf: net.layer(rbf),
            readout: readout.map(|k| net.layer(k)),
        }
    }

    /// Places the given centers and solves the readout exactly. The number of
    /// centers may differ from the current layer size.
    pub fn refit(&self, p: &BlockProblem, centers: DMatrix<f64>) -> Result<RbfFit> {
        let mut rbf_spec = self.rbf.spec().clone();
        rbf_spec.out_dim = centers.nrows();
        let rbf = Layer::new(rbf_spec, centers)?;
        let feats = rbf_features(p.input, rbf.weights(), rbf.spec().rbf_width);
        let rbf_reg = p.reg(&rbf) * frobenius_sq(rbf.weights());
        match self.readout {
            None => {
                let objective = 0.5 * p.weight * frobenius_sq(&(p.target - feats)) + rbf_reg;
                Ok(RbfFit {
                    rbf,
                    readout: None,
                    objective,
                })
            }
            Some(old) => {
                let mut spec = old.spec().clone();
                spec.in_dim = rbf.spec().out_dim;
                let reg = p.reg(old);
                let phi = design(&feats, spec.has_bias());
                let w = ridge_lsq(&phi, p.target, 2.0 * reg / p.weight)?.transpose();
                let resid = p.target - &phi * w.transpose();
                let objective = 0.5 * p.weight * frobenius_sq(&resid) + reg * frobenius_sq(&w) + rbf_reg;
                Ok(RbfFit {
                    rbf,
                    readout: Some(Layer::new(spec, w)?),
                    objective,
                })
            }
        }
    }
}

/// Objective of an arbitrary block evaluated in batch.
pub(crate) fn block_objective(layers: &[Layer], p: &BlockProblem) -> f64 {
    let mut a = p.input.clone();
    for l in layers {
        a = l.apply_batch(&a);
    }
    let reg: f64 = layers.iter().map(|l| p.reg(l) * frobenius_sq(l.weights())).sum();
    0.5 * p.weight * frobenius_sq(&(p.target - a)) + reg
}

fn unflatten(layers: &[Layer], theta: &DVector<f64>) -> Vec<Layer> {
    let mut off = 0;
    layers
        .iter()
        .map(|l| {
            let (r, c) = l.weights().shape();
            let w = DMatrix::from_row_slice(r, c, &theta.as_slice()[off..off + r * c]);
            off += r * c;
            let mut out = l.clone();
            out.set_weights(w).expect("shape preserved");
            out
        })
        .collect()
}

/// Joint Gauss-Newton over all weights of a multi-layer block.
fn fit_joint(layers: &[Layer], p: &BlockProblem, cfg: &StepConfig) -> Result<Vec<Layer>> {
    let sizes: Vec<usize> = layers.iter().map(|l| l.spec().param_count()).collect();
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    let np: usize = sizes.iter().sum();
    let mut theta = DVector::from_iterator(
        np,
        layers.iter().flat_map(|l| {
            let w = l.weights();
            (0..w.nrows()).flat_map(move |h| (0..w.ncols()).map(move |i| w[(h, i)]))
        }),
    );
    let objective = |th: &DVector<f64>| block_objective(&unflatten(layers, th), p);
    let mut f = objective(&theta);
    let out_dim = p.target.ncols();
    for _ in 0..cfg.w_gn_iters {
        let cur = unflatten(layers, &theta);
        let mut h = DMatrix::zeros(np, np);
        let mut g = DVector::zeros(np);
        for n in 0..p.input.nrows() {
            let mut acts = Vec::with_capacity(cur.len());
            let mut a = p.input.row(n).transpose();
            for l in &cur {
                let next = l.apply(&a);
                acts.push(a);
                a = next;
            }
            let resid = &a - p.target.row(n).transpose();
            let mut jac = DMatrix::zeros(out_dim, np);
            let mut chain = DMatrix::<f64>::identity(out_dim, out_dim);
            for (k, l) in cur.iter().enumerate().rev() {
                let lj = l.jacobians(&acts[k]);
                let rl = l.spec().row_len();
                for u in 0..l.spec().out_dim {
                    let col = chain.column(u);
                    let base = offsets[k] + u * rl;
                    for i in 0..rl {
                        let d = lj.units[(u, i)];
                        if d != 0.0 {
                            for o in 0..out_dim {
                                jac[(o, base + i)] = col[o] * d;
                            }
                        }
                    }
                }
                chain = chain * lj.input;
            }
            h.gemm_tr(p.weight, &jac, &jac, 1.0);
            g.gemv_tr(p.weight, &jac, &resid, 1.0);
        }
        for (k, l) in cur.iter().enumerate() {
            let c = p.reg(l);
            if c > 0.0 {
                for i in offsets[k]..offsets[k] + sizes[k] {
                    h[(i, i)] += 2.0 * c;
                    g[i] += 2.0 * c * theta[i];
                }
            }
        }
        if g.iter().all(|v| *v == 0.0) {
            break;
        }
        match damped_step(&h, &g, &theta, f, objective, cfg) {
            GnStep::Accepted { x, value } => {
                let done = f - value <= 1e-14 * f.abs();
                theta = x;
                f = value;
                if done {
                    break;
                }
            }
            GnStep::Rejected => break,
        }
    }
    Ok(unflatten(layers, &theta))
}
