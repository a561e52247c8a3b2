#![allow(dead_code)]

use macqp_core::model::{init_weights, Dataset, LayerSpec, NestedNet};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A small random net that always contains a sigmoid, a linear and an RBF
/// layer, in shuffled order, plus up to two extra layers. Every hidden
/// boundary carries coordinates.
pub fn random_net(seed: u64) -> (NestedNet, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kinds = vec![0u8, 1, 2];
    for _ in 0..rng.random_range(0..=2) {
        kinds.push(rng.random_range(0..3));
    }
    for i in (1..kinds.len()).rev() {
        kinds.swap(i, rng.random_range(0..=i));
    }
    let d_in = rng.random_range(2..=5);
    let mut widths = vec![d_in];
    for _ in 0..kinds.len() {
        widths.push(rng.random_range(2..=6));
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
    let placement: Vec<usize> = (1..specs.len()).collect();
    let net = init_weights(&specs, placement, seed).unwrap();
    let n = rng.random_range(5..=10);
    let x = DMatrix::from_fn(n, d_in, |_, _| rng.random_range(-1.0..1.0));
    let y = DMatrix::from_fn(n, *widths.last().unwrap(), |_, _| rng.random_range(-1.0..1.0));
    (net, Dataset::new(x, y).unwrap())
}

/// Points near a closed curve in `d` dimensions, scaled into [0, 1].
pub fn curve_data(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, d, |i, j| {
        let t = i as f64 / n as f64 * std::f64::consts::TAU;
        let v = (t * (1 + j % 3) as f64 + j as f64).sin();
        0.5 + 0.4 * v + 0.02 * rng.random_range(-1.0..1.0)
    })
}

/// Sigmoid autoencoder `d - h - c - h - d` with a linear output layer.
pub fn autoencoder(d: usize, h: usize, c: usize, placement: Vec<usize>, seed: u64) -> NestedNet {
    let specs = [
        LayerSpec::sigmoid(d, h),
        LayerSpec::sigmoid(h, c),
        LayerSpec::sigmoid(c, h),
        LayerSpec::linear(h, d),
    ];
    init_weights(&specs, placement, seed).unwrap()
}
