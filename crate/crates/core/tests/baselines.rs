mod common;

use macqp_core::baselines::{cg_train, kmeans, sgd_train, CgConfig, LineSearch, SgdConfig};
use macqp_core::model::{backprop_gradient, init_weights, Dataset, LayerSpec, NestedNet};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, &values[..rows * cols])
}

fn gradient_norm(net: &NestedNet, data: &Dataset) -> f64 {
    net.flatten_like(&backprop_gradient(net, data).unwrap()).norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cg_solves_linear_least_squares(
        n in 12usize..30,
        d in 1usize..5,
        e in 1usize..4,
        ridge in prop_oneof![Just(0.0), 1e-3f64..1.0],
        values in proptest::collection::vec(-1.0f64..1.0, 200),
        cubic in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let x = matrix(n, d, &values);
        let y = DMatrix::from_fn(n, e, |i, j| values[(i * 7 + j * 3 + 101) % 200] + 0.3 * x[(i, j % d)]);
        let data = Dataset::new(x.clone(), y.clone()).unwrap();
        let net = init_weights(&[LayerSpec::linear(d, e).with_ridge(ridge)], vec![], seed).unwrap();
        let cfg = CgConfig {
            max_iters: 2000,
            grad_tol: 1e-9,
            trace_every: 1000,
            line_search: if cubic { LineSearch::CubicInterpolation } else { LineSearch::Backtracking },
            ..CgConfig::default()
        };
        let (fit, _) = cg_train(&net, &data, &cfg).unwrap();
        // Backtracking judges steps by objective values alone and stalls at their roundoff.
        let (grad_tol, tol) = if cubic { (1e-8, 1e-6) } else { (1e-6, 1e-4) };
        let grad = gradient_norm(&fit, &data);
        prop_assert!(grad <= grad_tol, "gradient norm {}", grad);

        // Normal equations with the bias column: W (P'P + 2 ridge I) = Y'P.
        let p = DMatrix::from_fn(n, d + 1, |i, j| if j < d { x[(i, j)] } else { 1.0 });
        let lhs = p.tr_mul(&p) + DMatrix::identity(d + 1, d + 1) * (2.0 * ridge);
        let exact = lhs.lu().solve(&p.tr_mul(&y)).unwrap().transpose();
        let err = (fit.layer(0).weights() - &exact).abs().max();
        prop_assert!(err <= tol, "max entry error {}", err);
    }

    #[test]
    fn lloyd_iterations_never_raise_the_inertia(
        n in 5usize..40,
        k in 1usize..6,
        values in proptest::collection::vec(-3.0f64..3.0, 120),
        seed in 0u64..1000,
    ) {
        prop_assume!(k <= n);
        let pts = matrix(n, 3, &values);
        let km = kmeans(&pts, k, seed, 50).unwrap();
        prop_assert!(km.inertia.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{:?}", km.inertia);
        for (i, &c) in km.assignments.iter().enumerate() {
            let own = (pts.row(i) - km.centers.row(c)).norm_squared();
            for other in 0..k {
                prop_assert!(own <= (pts.row(i) - km.centers.row(other)).norm_squared() + 1e-12);
            }
        }
    }

    #[test]
    fn kmeans_with_one_center_per_point_returns_the_points(
        n in 1usize..30,
        values in proptest::collection::vec(-3.0f64..3.0, 90),
        seed in 0u64..1000,
    ) {
        let pts = matrix(n, 3, &values);
        let km = kmeans(&pts, n, seed, 10).unwrap();
        prop_assert_eq!(km.centers, pts);
        prop_assert_eq!(km.inertia.last().copied(), Some(0.0));
    }
}

#[test]
fn sgd_with_zero_learning_rate_leaves_the_objective_constant() {
    let x = common::curve_data(40, 6, 1);
    let data = Dataset::autoencoder(x).unwrap();
    let net = common::autoencoder(6, 4, 2, vec![], 3);
    let cfg = SgdConfig {
        learning_rate: 0.0,
        epochs: 5,
        minibatch: 8,
        ..SgdConfig::default()
    };
    let (out, trace) = sgd_train(&net, &data, &cfg).unwrap();
    assert_eq!(out, net);
    assert_eq!(trace.rows.len(), 6);
    assert!(trace.rows.iter().all(|r| r.e1_train == trace.rows[0].e1_train));
}

#[test]
fn sgd_and_cg_reduce_the_autoencoder_error() {
    let x = common::curve_data(40, 6, 2);
    let data = Dataset::autoencoder(x).unwrap();
    let net = common::autoencoder(6, 4, 2, vec![], 4);
    let sgd = SgdConfig {
        learning_rate: 0.05,
        epochs: 30,
        minibatch: 10,
        ..SgdConfig::default()
    };
    let (_, trace) = sgd_train(&net, &data, &sgd).unwrap();
    assert!(trace.rows.last().unwrap().e1_train < trace.rows[0].e1_train);
    let cg = CgConfig {
        max_iters: 50,
        ..CgConfig::default()
    };
    let (_, trace) = cg_train(&net, &data, &cg).unwrap();
    assert!(trace.rows.windows(2).all(|w| w[1].e1_train <= w[0].e1_train));
    assert!(trace.rows.last().unwrap().e1_train < 0.5 * trace.rows[0].e1_train);
}
