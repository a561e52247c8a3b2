//! One experiment: data, initial net, training and artifacts.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use macqp_core::baselines::{alt_opt_rbf_train, cg_train, sgd_train};
use macqp_core::checkpoint::save_checkpoint;
use macqp_core::mac::{lift_to_feasible, mac_train_from, postprocess, AuxState};
use macqp_core::model::{bias_warmup, init_weights, nested_objective_on, Dataset, NestedNet};
use macqp_core::selection::{mac_train_with_selection, selectable_sizes};
use macqp_core::trace::{RunStatus, TraceEvent, TraceRow, TrainTrace};
use serde::Serialize;

use crate::config::{DataConfig, ExperimentConfig, Method, ZInit};
use crate::dataset::{load_dataset, DataFormat};
use crate::error::{config_err, io_err, HarnessError, Result};
use crate::pca::Pca;
use crate::pgm::{default_shape, save_pgm};
use crate::synth::{synth_manifold_dataset, SynthConfig};

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub net: NestedNet,
    pub trace: TrainTrace,
    /// Wall-clock seconds of training, postprocessing included.
    pub seconds: f64,
}

impl Outcome {
    pub fn final_e1(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.e1_train)
    }
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        DataConfig::Synth(s) => {
            let synth = synth_manifold_dataset(&SynthConfig {
                n: s.n + s.validation,
                ambient_dim: s.ambient_dim,
                intrinsic_dim: s.intrinsic_dim,
                noise: s.noise,
                seed: s.seed,
            })?;
            let train = synth.x.rows(0, s.n).into_owned();
            let data = Dataset::autoencoder(train)?;
            if s.validation == 0 {
                return Ok(data);
            }
            let val = synth.x.rows(s.n, s.validation).into_owned();
            Ok(data.with_validation(val.clone(), val)?)
        }
        DataConfig::Files(f) => {
            let read = |path: &Path| {
                let format = f.format.unwrap_or_else(|| DataFormat::from_path(path));
                load_dataset(path, format, f.input_dim)
            };
            let data = read(&f.train)?.into_dataset()?;
            match &f.validation {
                Some(p) => {
                    let v = read(p)?;
                    Ok(data.with_validation(v.x, v.y)?)
                }
                None => Ok(data),
            }
        }
    }
}

/// Random weights from the config seed followed by the warmup step.
pub fn initial_net(cfg: &ExperimentConfig, data: &Dataset) -> Result<NestedNet> {
    let specs = cfg.architecture.specs(data.input_dim())?;
    let out = specs.last().expect("nonempty").out_dim;
    if out != data.output_dim() {
        return config_err(format!("the net outputs {out} values, the targets have {}", data.output_dim()));
    }
    let net = init_weights(&specs, cfg.architecture.placement()?, cfg.seed)?;
    if !cfg.warmup {
        return Ok(net);
    }
    let (net, step) = bias_warmup(&net, data)?;
    info!("warmup step {step}");
    Ok(net)
}

/// Starting coordinates for the auxiliary-coordinate methods.
pub fn initial_aux(cfg: &ExperimentConfig, net: &NestedNet, data: &Dataset) -> Result<AuxState> {
    let single = net.placement().len() == 1;
    let how = cfg.z_init.unwrap_or(if single { ZInit::Pca } else { ZInit::Forward });
    match how {
        ZInit::Forward => Ok(lift_to_feasible(net, data.inputs())?),
        ZInit::Pca => {
            if !single {
                return config_err("pca initialization needs exactly one coordinate boundary");
            }
            let b = net.placement()[0];
            let width = net.boundary_width(b);
            if width > data.input_dim() {
                return config_err(format!("cannot take {width} principal components of {} inputs", data.input_dim()));
            }
            let pca = Pca::fit(data.inputs())?;
            let mut codes = pca.project(data.inputs(), width);
            if cfg.is_sigmoid(b - 1) {
                // Codes of a sigmoid layer live in (0, 1); keep clear of saturation.
                for mut col in codes.column_iter_mut() {
                    let (lo, hi) = (col.min(), col.max());
                    let span = if hi > lo { hi - lo } else { 1.0 };
                    col.apply(|v| *v = 0.1 + 0.8 * (*v - lo) / span);
                }
            } else if pca.eigenvalues[0] > 0.0 {
                codes /= pca.eigenvalues[0].sqrt();
            }
            Ok(AuxState::new(vec![codes])?)
        }
    }
}

/// Trains `net` with the configured method. Mac methods end with a
/// postprocessing step recorded as its own trace row.
pub fn train(cfg: &ExperimentConfig, data: &Dataset, net: &NestedNet) -> Result<Outcome> {
    let start = Instant::now();
    let step = cfg.step_config();
    let budget = |own: Option<f64>| cfg.max_seconds.or(own);
    let (net, mut trace) = match cfg.method {
        Method::Mac | Method::MacSelect => {
            let aux = initial_aux(cfg, net, data)?;
            let schedule = macqp_core::mac::PenaltySchedule {
                max_seconds: budget(cfg.schedule.max_seconds),
                ..cfg.schedule.clone()
            };
            let run = if cfg.method == Method::MacSelect {
                mac_train_with_selection(net, &aux, data, &schedule, &step, &cfg.selection)?
            } else {
                mac_train_from(net, &aux, data, &schedule, &step)?
            };
            (run.net, run.trace)
        }
        Method::Sgd => {
            let sgd = macqp_core::baselines::SgdConfig {
                max_seconds: budget(cfg.sgd.max_seconds),
                ..cfg.sgd.clone()
            };
            sgd_train(net, data, &sgd)?
        }
        Method::Cg => {
            let cg = macqp_core::baselines::CgConfig {
                max_seconds: budget(cfg.cg.max_seconds),
                ..cfg.cg.clone()
            };
            cg_train(net, data, &cg)?
        }
        Method::Altopt => {
            let alt = macqp_core::baselines::AltOptConfig {
                max_seconds: budget(cfg.altopt.max_seconds),
                ..cfg.altopt.clone()
            };
            alt_opt_rbf_train(net, data, &alt, &step)?
        }
    };
    let mut net = net;
    if cfg.method.is_mac() && !matches!(trace.status, RunStatus::Aborted(_)) {
        net = postprocess(&net, data, &step)?;
        let e1_val = match data.validation() {
            Some((x, y)) => Some(nested_objective_on(&net, x, y)?),
            None => None,
        };
        let row = TraceRow {
            iter: trace.next_iter(),
            seconds: start.elapsed().as_secs_f64(),
            mu: trace.last().and_then(|r| r.mu),
            e1_train: nested_objective_on(&net, data.inputs(), data.targets())?,
            e1_val,
            eq: None,
            constraint_viol: None,
            event: TraceEvent::Postprocess,
        };
        trace.rows.push(row);
    }
    Ok(Outcome {
        net,
        trace,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Serialize)]
struct Summary<'a> {
    method: Method,
    status: String,
    rows: usize,
    e1_train: f64,
    e1_val: Option<f64>,
    seconds: f64,
    params: usize,
    selectable_sizes: Vec<usize>,
    stages: Vec<StageJson>,
    checkpoint: &'a str,
}

#[derive(Serialize)]
struct StageJson {
    mu: f64,
    iterations: usize,
    e1: f64,
    max_residual: f64,
}

pub fn status_name(status: &RunStatus) -> String {
    match status {
        RunStatus::Completed => "completed".into(),
        RunStatus::BudgetExhausted => "budget_exhausted".into(),
        RunStatus::Diverged => "diverged".into(),
        RunStatus::Aborted(msg) => format!("aborted: {msg}"),
    }
}

/// Writes trace.csv, model.macn, recon_{i}.pgm, selection.csv for selection
/// runs and summary.json into the output directory.
pub fn write_artifacts(cfg: &ExperimentConfig, data: &Dataset, out: &Outcome) -> Result<()> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let write = |name: &str, body: &[u8]| {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(io_err(p))
    };
    write("trace.csv", out.trace.to_csv(cfg.trace_seconds).as_bytes())?;
    save_checkpoint(&out.net, dir.join("model.macn"))?;

    let [rows, cols] = cfg.image_shape.unwrap_or_else(|| default_shape(data.output_dim()));
    if rows * cols != data.output_dim() {
        return config_err(format!("image shape {rows}x{cols} does not hold {} outputs", data.output_dim()));
    }
    for &i in &cfg.recon_samples {
        if i >= data.len() {
            warn!("no training sample {i} to reconstruct");
            continue;
        }
        let y = out.net.apply(&data.inputs().row(i).transpose());
        save_pgm(&dir.join(format!("recon_{i}.pgm")), y.as_slice(), rows, cols)?;
    }

    if cfg.method == Method::MacSelect {
        let mut csv = String::from("iter,mu,sizes_before,sizes_after,objective_before,objective_after\n");
        let join = |s: &[usize]| s.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";");
        for r in &out.trace.selections {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                r.iter,
                r.mu,
                join(&r.sizes_before),
                join(&r.sizes_after),
                r.objective_before,
                r.objective_after
            );
        }
        write("selection.csv", csv.as_bytes())?;
    }

    let last = out.trace.last();
    let summary = Summary {
        method: cfg.method,
        status: status_name(&out.trace.status),
        rows: out.trace.rows.len(),
        e1_train: out.final_e1(),
        e1_val: last.and_then(|r| r.e1_val),
        seconds: out.seconds,
        params: out.net.param_count(),
        selectable_sizes: selectable_sizes(&out.net),
        stages: out
            .trace
            .stages
            .iter()
            .map(|s| StageJson {
                mu: s.mu,
                iterations: s.iterations,
                e1: s.e1,
                max_residual: s.max_residual,
            })
            .collect(),
        checkpoint: "model.macn",
    };
    write("summary.json", serde_json::to_string_pretty(&summary)?.as_bytes())
}

/// Runs a whole experiment and writes its artifacts. An aborted run still
/// writes everything it has and then reports the abort as an error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    info!("{} training points, {} -> {}", data.len(), data.input_dim(), data.output_dim());
    let net = initial_net(cfg, &data)?;
    let out = train(cfg, &data, &net)?;
    info!(
        "{}: {} rows, E1 {:.6e}, {:.2} s",
        status_name(&out.trace.status),
        out.trace.rows.len(),
        out.final_e1(),
        out.seconds
    );
    write_artifacts(cfg, &data, &out)?;
    match &out.trace.status {
        RunStatus::Aborted(msg) => Err(HarnessError::Aborted(msg.clone())),
        RunStatus::Diverged => {
            warn!("training diverged");
            Ok(out)
        }
        _ => Ok(out),
    }
}
