use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// One center per row.
    pub centers: DMatrix<f64>,
    /// Index of the nearest center for every point.
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the nearest center, before the first
    /// iteration and after each one.
    pub inertia: Vec<f64>,
}

/// Lloyd's algorithm on the rows of `points`, seeded with `k` distinct points
/// drawn with `seed`. With `k` equal to the number of points the centers are
/// the points themselves, in order. An empty cluster is moved to the point
/// farthest from its current center. Stops early once assignments settle.
pub fn kmeans(points: &DMatrix<f64>, k: usize, seed: u64, iters: usize) -> Result<KMeans> {
    let m = points.nrows();
    if k == 0 || k > m {
        return config_err(format!("cannot place {k} centers among {m} points"));
    }
    if k == m {
        return Ok(KMeans {
            centers: points.clone(),
            assignments: (0..m).collect(),
            inertia: vec![0.0],
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, m, k).into_vec();
    chosen.sort_unstable();
    let mut centers = points.select_rows(&chosen);
    let (mut assignments, mut dists) = assign(points, &centers);
    let mut inertia = vec![dists.iter().sum::<f64>()];
    for _ in 0..iters {
        let mut sums = DMatrix::zeros(k, points.ncols());
        let mut counts = vec![0usize; k];
        for (n, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            let mut r = sums.row_mut(c);
            r += points.row(n);
        }
        let mut reseeded = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                let mean = sums.row(c) / counts[c] as f64;
                centers.row_mut(c).copy_from(&mean);
            } else {
                let far = (0..m)
                    .filter(|n| !reseeded.contains(n))
                    .fold(None::<usize>, |best, n| match best {
                        Some(b) if dists[b] >= dists[n] => Some(b),
                        _ => Some(n),
                    })
                    .expect("fewer clusters than points");
                reseeded.push(far);
                centers.row_mut(c).copy_from(&points.row(far));
            }
        }
        let (next, d) = assign(points, &centers);
        inertia.push(d.iter().sum());
        dists = d;
        let settled = next == assignments && reseeded.is_empty();
        assignments = next;
        if settled {
            break;
        }
    }
    Ok(KMeans {
        centers,
        assignments,
        inertia,
    })
}

/// Nearest center (lowest index on ties) and squared distance for every point.
fn assign(points: &DMatrix<f64>, centers: &DMatrix<f64>) -> (Vec<usize>, Vec<f64>) {
    let d = points.ncols();
    (0..points.nrows())
        .map(|n| {
            let mut best = (0, f64::INFINITY);
            for c in 0..centers.nrows() {
                let mut s = 0.0;
                for i in 0..d {
                    let t = points[(n, i)] - centers[(c, i)];
                    s += t * t;
                }
                if s < best.1 {
                    best = (c, s);
                }
            }
            best
        })
        .unzip()
}
