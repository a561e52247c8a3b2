//! Synthetic autoencoder data: a smooth low-dimensional manifold embedded
//! in a higher-dimensional cube.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Frequencies of the sinusoids along every intrinsic coordinate. Each
/// ambient coordinate is a sum of `sin(2 pi f t_k + phase)` terms, so the
/// clean data span an affine subspace of dimension at most
/// `2 * FREQUENCIES.len() * intrinsic_dim`.
const FREQUENCIES: [f64; 2] = [1.0, 2.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub ambient_dim: usize,
    pub intrinsic_dim: usize,
    /// Standard deviation of the Gaussian noise added to every coordinate.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 500,
            ambient_dim: 64,
            intrinsic_dim: 2,
            noise: 0.01,
            seed: 0,
        }
    }
}

/// The embedding map of a synthetic manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifold {
    /// Amplitudes, ambient_dim x (intrinsic_dim * frequencies).
    amplitude: DMatrix<f64>,
    phase: DMatrix<f64>,
}

impl Manifold {
    pub fn new(ambient_dim: usize, intrinsic_dim: usize, seed: u64) -> Result<Self> {
        if intrinsic_dim == 0 || intrinsic_dim >= ambient_dim {
            return config_err(format!(
                "intrinsic dimension {intrinsic_dim} must be positive and below the ambient {ambient_dim}"
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let terms = intrinsic_dim * FREQUENCIES.len();
        let mut amplitude = DMatrix::from_fn(ambient_dim, terms, |_, _| rng.random_range(-1.0..1.0));
        // Scale every row to an l1 norm of one so the clean values stay in [-1, 1].
        for mut row in amplitude.row_iter_mut() {
            let s = row.iter().map(|v: &f64| v.abs()).sum::<f64>();
            row /= s;
        }
        let phase = DMatrix::from_fn(ambient_dim, terms, |_, _| rng.random_range(0.0..std::f64::consts::TAU));
        Ok(Self { amplitude, phase })
    }

    pub fn ambient_dim(&self) -> usize {
        self.amplitude.nrows()
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.amplitude.ncols() / FREQUENCIES.len()
    }

    /// The clean point at intrinsic coordinates `t` in [0, 1]^d, inside
    /// [0.1, 0.9]^D.
    pub fn point(&self, t: &[f64]) -> DVector<f64> {
        let nf = FREQUENCIES.len();
        DVector::from_fn(self.ambient_dim(), |i, _| {
            let s: f64 = (0..self.amplitude.ncols())
                .map(|c| {
                    let arg = std::f64::consts::TAU * FREQUENCIES[c % nf] * t[c / nf] + self.phase[(i, c)];
                    self.amplitude[(i, c)] * arg.sin()
                })
                .sum();
            0.5 + 0.4 * s
        })
    }
}

/// Samples from a synthetic manifold. `latent` holds the intrinsic
/// coordinates of every sample.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub manifold: Manifold,
    pub latent: DMatrix<f64>,
    pub x: DMatrix<f64>,
}

/// Draws `n` points uniformly in intrinsic coordinates, maps them through
/// the manifold and adds noise; values are clamped to [0, 1]. Targets are
/// the inputs.
pub fn synth_manifold_dataset(cfg: &SynthConfig) -> Result<SynthData> {
    if cfg.n == 0 {
        return config_err("synthetic data needs at least one point");
    }
    if !(cfg.noise.is_finite() && cfg.noise >= 0.0) {
        return config_err(format!("noise must be finite and nonnegative, got {}", cfg.noise));
    }
    let manifold = Manifold::new(cfg.ambient_dim, cfg.intrinsic_dim, cfg.seed)?;
    // A separate stream keeps the samples independent of the embedding draw.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED));
    let latent = DMatrix::from_fn(cfg.n, cfg.intrinsic_dim, |_, _| rng.random_range(0.0..1.0));
    let normal = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("valid deviation");
    let mut x = DMatrix::zeros(cfg.n, cfg.ambient_dim);
    for n in 0..cfg.n {
        let t: Vec<f64> = latent.row(n).iter().copied().collect();
        let p = manifold.point(&t);
        for i in 0..cfg.ambient_dim {
            let e = if cfg.noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            x[(n, i)] = (p[i] + e).clamp(0.0, 1.0);
        }
    }
    Ok(SynthData { manifold, latent, x })
}
