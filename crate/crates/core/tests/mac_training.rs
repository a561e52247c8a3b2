mod common;

use macqp_core::checkpoint::to_bytes;
use macqp_core::mac::{
    lift_to_feasible, mac_train, mac_train_observed, postprocess, w_step, z_step, PenaltySchedule, StepConfig,
};
use macqp_core::model::{bias_warmup, nested_objective, Dataset};
use macqp_core::parallel::{ParallelConfig, ShardGranularity};
use macqp_core::trace::{RunStatus, TraceEvent, TrainTrace};

fn problem() -> (macqp_core::model::NestedNet, Dataset) {
    let x = common::curve_data(60, 10, 3);
    let data = Dataset::autoencoder(x).unwrap();
    let net = common::autoencoder(10, 6, 2, vec![1, 2, 3], 5);
    (bias_warmup(&net, &data).unwrap().0, data)
}

fn schedule(stages: usize) -> PenaltySchedule {
    PenaltySchedule {
        max_stages: stages,
        max_iters_per_stage: 15,
        ..PenaltySchedule::default()
    }
}

/// Every W- and Z-step row against the row before it in the same stage.
fn descent_violations(trace: &TrainTrace) -> usize {
    trace
        .rows
        .windows(2)
        .filter(|w| matches!(w[1].event, TraceEvent::WStep | TraceEvent::ZStep))
        .filter(|w| w[1].eq.unwrap() > w[0].eq.unwrap() * (1.0 + 1e-10))
        .count()
}

#[test]
fn steps_never_increase_the_penalty_function() {
    let (net, data) = problem();
    let run = mac_train(&net, &data, &schedule(4), &StepConfig::default()).unwrap();
    assert_eq!(run.trace.status, RunStatus::Completed);
    assert_eq!(descent_violations(&run.trace), 0);
    let last = run.trace.rows.last().unwrap().e1_train;
    assert!(last < run.trace.rows[0].e1_train);
}

#[test]
fn constraint_residual_shrinks_along_the_penalty_path() {
    let (net, data) = problem();
    let run = mac_train(&net, &data, &schedule(5), &StepConfig::default()).unwrap();
    let res: Vec<f64> = run.trace.stages.iter().map(|s| s.max_residual).collect();
    let mus: Vec<f64> = run.trace.stages.iter().map(|s| s.mu).collect();
    assert_eq!(mus, vec![1.0, 10.0, 100.0, 1e3, 1e4]);
    assert!(res.windows(2).all(|w| w[1] <= w[0]), "{res:?}");
    assert!(res[4] <= 0.25 * res[0], "{res:?}");
}

#[test]
fn postprocessing_never_hurts_mid_training() {
    let (net, data) = problem();
    let aux = lift_to_feasible(&net, data.inputs()).unwrap();
    let cfg = StepConfig::default();
    let mut checked = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut observer = |s: &macqp_core::mac::Snapshot<'_>| {
        let before = nested_objective(s.net, &data).unwrap();
        let after = nested_objective(&postprocess(s.net, &data, &cfg).unwrap(), &data).unwrap();
        worst = worst.max(after - before);
        checked += 1;
    };
    mac_train_observed(&net, &aux, &data, &schedule(3), &cfg, &mut observer).unwrap();
    assert!(checked >= 10, "only {checked} snapshots");
    assert!(worst <= 1e-10, "postprocessing raised E1 by {worst}");
}

#[test]
fn worker_count_and_granularity_do_not_change_results() {
    let (net, data) = problem();
    let aux = lift_to_feasible(&net, data.inputs()).unwrap();
    let mut runs = Vec::new();
    for workers in [1, 2, 3, 4] {
        for shard_granularity in [ShardGranularity::PerUnit, ShardGranularity::PerPoint, ShardGranularity::Auto] {
            let cfg = StepConfig {
                parallel: ParallelConfig {
                    workers,
                    shard_granularity,
                },
                ..StepConfig::default()
            };
            let w = w_step(&net, &aux, &data, 5.0, &cfg).unwrap();
            let z = z_step(&w, &aux, &data, 5.0, &cfg).unwrap();
            let full = mac_train(&net, &data, &schedule(2), &cfg).unwrap();
            runs.push((to_bytes(&w), z, to_bytes(&full.net), full.trace.to_csv(false)));
        }
    }
    for r in &runs[1..] {
        assert!(r.0 == runs[0].0 && r.1 == runs[0].1 && r.2 == runs[0].2 && r.3 == runs[0].3);
    }
}

#[test]
fn coding_layer_only_placement_trains() {
    let x = common::curve_data(60, 10, 4);
    let data = Dataset::autoencoder(x).unwrap();
    let net = common::autoencoder(10, 6, 2, vec![2], 9);
    let run = mac_train(&net, &data, &schedule(3), &StepConfig::default()).unwrap();
    assert_eq!(descent_violations(&run.trace), 0);
    assert!(run.trace.rows.last().unwrap().e1_train < run.trace.rows[0].e1_train);
}
