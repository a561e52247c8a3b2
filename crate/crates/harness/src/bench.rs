//! Parallel speedup benchmark: the same training run at several worker
//! counts, timed, with the checkpoints compared byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use log::info;
use macqp_core::checkpoint::to_bytes;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{config_err, io_err, HarnessError, Result};
use crate::experiment::{initial_net, load_data, train};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub workers: usize,
    pub seconds: f64,
    /// Time of the first listed worker count over this row's time.
    pub speedup: f64,
    /// SHA-256 of the final checkpoint, hex encoded.
    pub digest: String,
}

/// Trains once per worker count from the same initial net. Fails with
/// [`HarnessError::Nondeterministic`] when any checkpoint differs from the
/// first. Speedups are relative to the first entry of `workers`.
pub fn speedup_bench(cfg: &ExperimentConfig, workers: &[usize]) -> Result<Vec<BenchRow>> {
    if workers.is_empty() || workers.contains(&0) {
        return config_err("worker counts must be positive and nonempty");
    }
    cfg.validate()?;
    let data = load_data(cfg)?;
    let net = initial_net(cfg, &data)?;
    let mut rows: Vec<BenchRow> = Vec::with_capacity(workers.len());
    for &w in workers {
        let mut c = cfg.clone();
        c.parallel.workers = w;
        let out = train(&c, &data, &net)?;
        let digest = hex(&Sha256::digest(to_bytes(&out.net)));
        let base = rows.first().map_or(out.seconds, |r| r.seconds);
        info!("{w} workers: {:.3} s, {digest}", out.seconds);
        if let Some(first) = rows.first() {
            if first.digest != digest {
                return Err(HarnessError::Nondeterministic(format!(
                    "{} workers gave {}, {w} workers gave {digest}",
                    first.workers, first.digest
                )));
            }
        }
        rows.push(BenchRow {
            workers: w,
            seconds: out.seconds,
            speedup: base / out.seconds,
            digest,
        });
    }
    Ok(rows)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("workers,seconds,speedup\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.workers, r.seconds, r.speedup);
    }
    s
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    std::fs::write(path, bench_csv(rows)).map_err(io_err(path))
}
