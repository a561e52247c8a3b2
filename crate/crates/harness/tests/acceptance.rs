//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one line per criterion; exits with status 1 if any fails.
//!
//! `cargo test -p macqp-harness --test acceptance` runs all ten; criterion
//! numbers after `--` select a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use macqp_core::baselines::{cg_train, kmeans, CgConfig};
use macqp_core::mac::{
    lift_to_feasible, mac_train_from, mac_train_observed, multiplier_estimates, postprocess, qp_objective, w_step,
    PenaltySchedule, Snapshot,
};
use macqp_core::model::{
    backprop_gradient, init_weights, nested_objective, nested_objective_on, Dataset, LayerSpec, NestedNet,
};
use macqp_core::selection::{aic_cost, mac_train_with_selection, selection_step, SelectionConfig};
use macqp_core::trace::{TraceEvent, TrainTrace};
use macqp_harness::bench::speedup_bench;
use macqp_harness::config::{
    ArchitectureConfig, DataConfig, ExperimentConfig, LayerConfig, LayerKindName, Method, SynthSource,
};
use macqp_harness::experiment::{initial_aux, initial_net, load_data, train};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- problems

/// A random net of at most 1000 weights holding a sigmoid, a linear and an
/// RBF layer in shuffled order, with coordinates at every boundary.
fn random_net(seed: u64) -> (NestedNet, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kinds = vec![0u8, 1, 2];
    for _ in 0..rng.random_range(0..=2) {
        kinds.push(rng.random_range(0..3));
    }
    for i in (1..kinds.len()).rev() {
        kinds.swap(i, rng.random_range(0..=i));
    }
    let mut widths = vec![rng.random_range(2..=10)];
    for _ in 0..kinds.len() {
        widths.push(rng.random_range(2..=14));
    }
    let specs: Vec<LayerSpec> = kinds
        .iter()
        .enumerate()
        .map(|(k, kind)| {
            let (i, o) = (widths[k], widths[k + 1]);
            let ridge = if rng.random_bool(0.5) { rng.random_range(0.0..0.1) } else { 0.0 };
            let spec = match kind {
                0 => LayerSpec::sigmoid(i, o).with_bias(rng.random_bool(0.7)),
                1 => LayerSpec::linear(i, o).with_bias(rng.random_bool(0.7)),
                _ => LayerSpec::rbf(i, o, rng.random_range(0.6..2.0)),
            };
            spec.with_ridge(ridge)
        })
        .collect();
    let net = init_weights(&specs, (1..specs.len()).collect(), seed).unwrap();
    let n = rng.random_range(5..=12);
    let x = DMatrix::from_fn(n, widths[0], |_, _| rng.random_range(-1.0..1.0));
    let y = DMatrix::from_fn(n, *widths.last().unwrap(), |_, _| rng.random_range(-1.0..1.0));
    (net, Dataset::new(x, y).unwrap())
}

/// The desk-scale sigmoid autoencoder 64-32-8-32-64 on 500 synthetic
/// points with 200 for validation, after the warmup step.
fn desk() -> (ExperimentConfig, Dataset, NestedNet) {
    let cfg = ExperimentConfig::default();
    let data = load_data(&cfg).unwrap();
    let net = initial_net(&cfg, &data).unwrap();
    (cfg, data, net)
}

fn desk_rbf_config() -> ExperimentConfig {
    let layer = |kind, units, width| LayerConfig {
        kind,
        units,
        width,
        ridge: 0.0,
        bias: if kind == LayerKindName::Linear { Some(false) } else { None },
    };
    ExperimentConfig {
        method: Method::MacSelect,
        data: DataConfig::Synth(SynthSource {
            validation: 0,
            ..SynthSource::default()
        }),
        architecture: ArchitectureConfig {
            layers: vec![
                layer(LayerKindName::Rbf, 16, Some(1.0)),
                layer(LayerKindName::Linear, 2, None),
                layer(LayerKindName::Rbf, 16, Some(0.5)),
                layer(LayerKindName::Linear, 64, None),
            ],
            placement: None,
        },
        ..ExperimentConfig::default()
    }
}

fn descent_violations(trace: &TrainTrace) -> (usize, usize) {
    let steps: Vec<_> = trace
        .rows
        .windows(2)
        .filter(|w| matches!(w[1].event, TraceEvent::WStep | TraceEvent::ZStep))
        .collect();
    let bad = steps
        .iter()
        .filter(|w| w[1].eq.unwrap() > w[0].eq.unwrap() * (1.0 + 1e-10))
        .count();
    (bad, steps.len())
}

fn central_difference(net: &NestedNet, data: &Dataset) -> DVector<f64> {
    let x = net.to_flat();
    let mut probe = net.clone();
    let mut flat = x.clone();
    let mut g = DVector::zeros(x.len());
    for i in 0..x.len() {
        let h = 1e-5 * x[i].abs().max(1.0);
        flat[i] = x[i] + h;
        probe.set_flat(&flat).unwrap();
        let up = nested_objective(&probe, data).unwrap();
        flat[i] = x[i] - h;
        probe.set_flat(&flat).unwrap();
        let down = nested_objective(&probe, data).unwrap();
        flat[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

// ---------------------------------------------------------------- criteria

fn gradient_oracle() -> Verdict {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut kinds = [false; 3];
    let mut largest = 0;
    let nets = 24;
    for seed in 0..nets {
        let (net, data) = random_net(seed);
        largest = largest.max(net.param_count());
        for l in net.layers() {
            kinds[l.kind().code() as usize] = true;
        }
        let exact = net.flatten_like(&backprop_gradient(&net, &data).unwrap());
        let fd = central_difference(&net, &data);
        worst = worst.max((&exact - &fd).norm() / exact.norm().max(fd.norm()).max(1e-12));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-6 && secs <= 10.0 && largest <= 1000 && kinds.iter().all(|&k| k),
        format!("{nets} nets up to {largest} weights, worst relative error {worst:.2e}, {secs:.2} s"),
    )
}

fn feasible_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let (net, data) = random_net(1000 + seed);
        let mu = 10f64.powf(rng.random_range(-3.0..8.0));
        let aux = lift_to_feasible(&net, data.inputs()).unwrap();
        let e1 = nested_objective(&net, &data).unwrap();
        let eq = qp_objective(&net, &aux, &data, mu).unwrap();
        worst = worst.max((eq - e1).abs() / (1.0 + e1));
    }
    verdict(worst <= 1e-12, format!("100 pairs, worst |E_Q - E1| / (1 + E1) = {worst:.2e}"))
}

fn monotone_descent() -> Verdict {
    let (cfg, data, net) = desk();
    let aux = initial_aux(&cfg, &net, &data).unwrap();
    let run = mac_train_from(&net, &aux, &data, &cfg.schedule, &cfg.step_config()).unwrap();
    let (bad, steps) = descent_violations(&run.trace);
    verdict(
        bad == 0 && steps > 0,
        format!("{bad} violations in {steps} accepted steps over {} stages", run.trace.stages.len()),
    )
}

fn penalty_path() -> Verdict {
    let (cfg, data, net) = desk();
    let aux = initial_aux(&cfg, &net, &data).unwrap();
    let schedule = PenaltySchedule {
        max_stages: 5,
        ..cfg.schedule.clone()
    };
    // The multiplier identity is checked at every recorded state along the path.
    let mut identity_gap = 0.0f64;
    let mut observer = |s: &Snapshot<'_>| {
        let lambda = multiplier_estimates(s.net, s.aux, data.inputs(), s.penalty.mu).unwrap();
        let blocks = s.net.blocks();
        for n in 0..data.len() {
            let z = s.aux.point(n);
            for j in 0..z.len() {
                let input = if j == 0 { data.inputs().row(n).transpose() } else { z[j - 1].clone() };
                let r = &z[j] - s.net.apply_range(blocks[j].clone(), &input);
                for i in 0..r.len() {
                    identity_gap = identity_gap.max((lambda[j][(n, i)] + s.penalty.mu * r[i]).abs());
                }
            }
        }
    };
    let run = mac_train_observed(&net, &aux, &data, &schedule, &cfg.step_config(), &mut observer).unwrap();
    let mus: Vec<f64> = run.trace.stages.iter().map(|s| s.mu).collect();
    let res: Vec<f64> = run.trace.stages.iter().map(|s| s.max_residual).collect();
    let monotone = res.windows(2).all(|w| w[1] <= w[0]);
    let ratio = res.last().unwrap() / res[0];
    let residuals = res.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>().join(" ");
    verdict(
        mus == [1.0, 10.0, 100.0, 1e3, 1e4] && monotone && ratio <= 1e-3 && identity_gap == 0.0,
        format!(
            "stage residuals [{residuals}], nonincreasing {monotone}, final/initial {ratio:.2e} (need <= 1e-3), multiplier identity gap {identity_gap:e}"
        ),
    )
}

fn postprocessing() -> Verdict {
    let (cfg, data, net) = desk();
    let aux = initial_aux(&cfg, &net, &data).unwrap();
    let step = cfg.step_config();
    let schedule = PenaltySchedule {
        max_stages: 5,
        ..cfg.schedule.clone()
    };
    let (x, y) = (data.inputs(), data.targets());
    let mut worst = f64::NEG_INFINITY;
    let mut checked = 0;
    let mut observer = |s: &Snapshot<'_>| {
        if s.row.event == TraceEvent::MuIncrease && s.row.iter == 0 {
            return;
        }
        let before = nested_objective_on(s.net, x, y).unwrap();
        let after = nested_objective_on(&postprocess(s.net, &data, &step).unwrap(), x, y).unwrap();
        worst = worst.max(after - before);
        checked += 1;
    };
    mac_train_observed(&net, &aux, &data, &schedule, &step, &mut observer).unwrap();
    verdict(
        checked >= 50 && worst <= 1e-10,
        format!("{checked} snapshots, largest E1 change from postprocessing {worst:.3e}"),
    )
}

fn aic_arithmetic() -> Verdict {
    let count = |m1: usize, m3: usize| {
        let specs = [
            LayerSpec::rbf(1024, m1, 1.0),
            LayerSpec::linear(m1, 2).with_bias(false),
            LayerSpec::rbf(2, m3, 1.0),
            LayerSpec::linear(m3, 1024).with_bias(false),
        ];
        let net = NestedNet::from_specs(&specs, vec![2]).unwrap();
        (net.param_count(), aic_cost(&net, 0.5))
    };
    let (a, ca) = count(1368, 1368);
    let (b, cb) = count(1368, 150);
    verdict(
        a == 2_807_136 && b == 1_557_468 && ca == 2.0 * 0.5 * a as f64 && cb == 2.0 * 0.5 * b as f64,
        format!("|W| = {a} for (1368, 1368) and {b} for (1368, 150)"),
    )
}

fn selection() -> Verdict {
    let cfg = desk_rbf_config();
    let data = load_data(&cfg).unwrap();
    let net = initial_net(&cfg, &data).unwrap();
    let aux = initial_aux(&cfg, &net, &data).unwrap();
    let step = cfg.step_config();

    // Centers far from the data make every W-step refit them from scratch.
    let sized = |m1: usize, m3: usize| {
        let mut c = cfg.clone();
        c.architecture.layers[0].units = m1;
        c.architecture.layers[2].units = m3;
        let mut net = init_weights(&c.architecture.specs(64).unwrap(), vec![2], 0).unwrap();
        for k in [0, 2] {
            let w = net.layer(k).weights();
            let far = DMatrix::from_element(w.nrows(), w.ncols(), 1e3);
            net.layer_mut(k).set_weights(far).unwrap();
        }
        net
    };
    let grid = [4usize, 8, 16, 32, 64];
    let mu = 10.0;
    let mut mismatches = Vec::new();
    let mut picks = Vec::new();
    let fits: Vec<(usize, usize, NestedNet)> = grid
        .iter()
        .flat_map(|&a| grid.iter().map(move |&b| (a, b)))
        .map(|(a, b)| (a, b, w_step(&sized(a, b), &aux, &data, mu, &step).unwrap()))
        .collect();
    for eps in [1e-6, 1e-5, 1e-4, 1e-3, 1e-2] {
        let (mut best, mut at) = (f64::INFINITY, (0, 0));
        for (a, b, fit) in &fits {
            let score = qp_objective(fit, &aux, &data, mu).unwrap() + aic_cost(fit, eps);
            if score < best {
                (best, at) = (score, (*a, *b));
            }
        }
        let sel = SelectionConfig {
            candidates: vec![grid.to_vec(), grid.to_vec()],
            epsilon_sq: eps,
            cadence: 1,
        };
        let (_, rec) = selection_step(&sized(2, 2), &aux, &data, mu, &step, &sel).unwrap();
        picks.push(at);
        if rec.sizes_after != [at.0, at.1] || (rec.objective_after - best).abs() > 1e-9 * best {
            mismatches.push(format!("eps {eps}: chose {:?}, grid {at:?}", rec.sizes_after));
        }
    }

    let schedule = PenaltySchedule {
        max_stages: 4,
        max_iters_per_stage: 10,
        ..cfg.schedule.clone()
    };
    let sel = SelectionConfig {
        candidates: vec![grid.to_vec(), grid.to_vec()],
        epsilon_sq: 1e-4,
        cadence: 2,
    };
    let run = mac_train_with_selection(&net, &aux, &data, &schedule, &step, &sel).unwrap();
    let rises = run.trace.selections.iter().filter(|r| r.objective_after > r.objective_before).count();
    picks.dedup();
    verdict(
        mismatches.is_empty() && rises == 0 && !run.trace.selections.is_empty(),
        format!(
            "grid picks {picks:?}, {} mismatches{}; {} selection steps, {rises} with E_Q + C rising",
            mismatches.len(),
            if mismatches.is_empty() { String::new() } else { format!(" ({})", mismatches.join("; ")) },
            run.trace.selections.len()
        ),
    )
}

fn learning_curves() -> Verdict {
    let budget = 60.0;
    let (cfg, data, net) = desk();
    let with = |method: Method, seconds: f64, lr: f64| {
        let mut c = cfg.clone();
        c.method = method;
        c.max_seconds = Some(seconds);
        c.sgd.learning_rate = lr;
        c.sgd.epochs = usize::MAX;
        c.cg.max_iters = usize::MAX;
        train(&c, &data, &net).unwrap()
    };
    // A short pilot picks the SGD step size so the baseline is tuned.
    let mut pilot = Vec::new();
    for lr in [1e-3, 3e-3, 1e-2, 3e-2, 1e-1] {
        let e = with(Method::Sgd, 5.0, lr).final_e1();
        pilot.push((if e.is_finite() { e } else { f64::INFINITY }, lr));
    }
    let lr = pilot.iter().min_by(|a, b| a.0.total_cmp(&b.0)).unwrap().1;

    let mac = with(Method::Mac, budget, 0.0);
    let sgd = with(Method::Sgd, budget, lr);
    let cg = with(Method::Cg, budget, 0.0);
    let (m, s, c) = (mac.final_e1(), sgd.final_e1(), cg.final_e1());
    let early = mac
        .trace
        .rows
        .iter()
        .filter(|r| r.seconds <= budget / 3.0)
        .map(|r| r.e1_train)
        .fold(f64::INFINITY, f64::min);
    verdict(
        m <= s.min(c) && early <= 1.1 * m,
        format!(
            "E1 at {budget} s: MAC {m:.4} ({:.1} s used), SGD {s:.4} (lr {lr}), CG {c:.4}; MAC best in first third {early:.4}",
            mac.seconds
        ),
    )
}

fn parallel_determinism() -> Verdict {
    let (cfg, _, _) = desk();
    match speedup_bench(&cfg, &[1, 2, 4]) {
        Ok(rows) => {
            let table = rows
                .iter()
                .map(|r| format!("{} workers {:.2} s x{:.2}", r.workers, r.seconds, r.speedup))
                .collect::<Vec<_>>()
                .join(", ");
            let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
            verdict(
                true,
                format!("checkpoints identical ({}...); {table}; {cores} cores", &rows[0].digest[..12]),
            )
        }
        Err(e) => verdict(false, e.to_string()),
    }
}

fn baseline_kernels() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut worst_grad, mut worst_err) = (0.0f64, 0.0f64);
    for trial in 0..10 {
        let (n, d, e) = (rng.random_range(15..40), rng.random_range(1..6), rng.random_range(1..4));
        let ridge = if trial % 2 == 0 { 0.0 } else { rng.random_range(1e-3..1.0) };
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(n, e, |_, _| rng.random_range(-1.0..1.0));
        let data = Dataset::new(x.clone(), y.clone()).unwrap();
        let net = init_weights(&[LayerSpec::linear(d, e).with_ridge(ridge)], vec![], trial).unwrap();
        let cg = CgConfig {
            grad_tol: 1e-9,
            ..CgConfig::default()
        };
        let (fit, _) = cg_train(&net, &data, &cg).unwrap();
        worst_grad = worst_grad.max(fit.flatten_like(&backprop_gradient(&fit, &data).unwrap()).norm());
        let p = DMatrix::from_fn(n, d + 1, |i, j| if j < d { x[(i, j)] } else { 1.0 });
        let lhs = p.tr_mul(&p) + DMatrix::identity(d + 1, d + 1) * (2.0 * ridge);
        let exact = lhs.lu().solve(&p.tr_mul(&y)).unwrap().transpose();
        worst_err = worst_err.max((fit.layer(0).weights() - exact).abs().max());
    }

    let pts = DMatrix::from_fn(60, 4, |_, _| rng.random_range(-2.0..2.0));
    let all = kmeans(&pts, 60, 3, 10).unwrap();
    let returns_points = all.centers == pts;
    let mut lloyd_ok = true;
    for (k, seed) in [(2, 0), (5, 1), (9, 2), (20, 3)] {
        let km = kmeans(&pts, k, seed, 100).unwrap();
        lloyd_ok &= km.inertia.windows(2).all(|w| w[1] <= w[0]);
    }
    verdict(
        worst_grad <= 1e-8 && worst_err <= 1e-6 && returns_points && lloyd_ok,
        format!(
            "CG gradient {worst_grad:.2e}, weight error {worst_err:.2e}; k-means k = M returns points {returns_points}; Lloyd nonincreasing {lloyd_ok}"
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("gradient oracle", gradient_oracle),
        ("feasible equivalence", feasible_equivalence),
        ("monotone descent", monotone_descent),
        ("penalty path", penalty_path),
        ("postprocessing", postprocessing),
        ("AIC arithmetic", aic_arithmetic),
        ("selection", selection),
        ("learning curves", learning_curves),
        ("parallel determinism", parallel_determinism),
        ("baseline kernels", baseline_kernels),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id} {name}: {} ({:.1} s)", v.detail, start.elapsed().as_secs_f64());
        if !v.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
