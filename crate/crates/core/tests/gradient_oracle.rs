mod common;

use macqp_core::mac::{lift_to_feasible, qp_gradient, qp_objective_with, Penalty};
use macqp_core::model::{backprop_gradient, nested_objective};
use nalgebra::DVector;

fn central_difference<F: FnMut(&DVector<f64>) -> f64>(mut f: F, x: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let h = 1e-5 * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

fn relative_error(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-12)
}

#[test]
fn backprop_matches_finite_differences_on_random_nets() {
    let mut kinds_seen = [false; 3];
    for seed in 0..24 {
        let (net, data) = common::random_net(seed);
        assert!(net.param_count() <= 1000);
        for l in net.layers() {
            kinds_seen[l.kind().code() as usize] = true;
        }
        let analytic = net.flatten_like(&backprop_gradient(&net, &data).unwrap());
        let mut scratch = net.clone();
        let numeric = central_difference(
            |w| {
                scratch.set_flat(w).unwrap();
                nested_objective(&scratch, &data).unwrap()
            },
            &net.to_flat(),
        );
        let err = relative_error(&analytic, &numeric);
        assert!(err <= 1e-6, "seed {seed}: relative error {err}");
    }
    assert!(kinds_seen.iter().all(|s| *s));
}

#[test]
fn penalty_gradient_matches_finite_differences_off_the_feasible_set() {
    for seed in 0..8 {
        let (net, data) = common::random_net(100 + seed);
        let lifted = lift_to_feasible(&net, data.inputs()).unwrap();
        // Perturb the coordinates so every penalty term is active.
        let blocks = lifted.blocks().iter().map(|b| b.map(|v| v + 0.1 * (v * 7.0).sin())).collect();
        let aux = macqp_core::mac::AuxState::new(blocks).unwrap();
        let pen = Penalty {
            mu: 3.0,
            transient_reg: 1e-3,
        };
        let g = qp_gradient(&net, &aux, &data, pen).unwrap();
        let analytic = net.flatten_like(&g.weights);
        let mut scratch = net.clone();
        let numeric = central_difference(
            |w| {
                scratch.set_flat(w).unwrap();
                qp_objective_with(&scratch, &aux, &data, pen).unwrap()
            },
            &net.to_flat(),
        );
        let err = relative_error(&analytic, &numeric);
        assert!(err <= 1e-6, "seed {seed}: weight gradient error {err}");
    }
}
