//! Deterministic fan-out of independent tasks over a fixed pool of threads.
//!
//! Results always come back in task order, so any reduction done by the caller
//! sees the same sequence regardless of the number of workers.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which training phases fan out over workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShardGranularity {
    /// W-steps run per unit in parallel; Z-steps run serially.
    PerUnit,
    /// Z-steps run per point in parallel; W-steps run serially.
    PerPoint,
    /// Both, plus model-selection candidates.
    #[default]
    Auto,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParallelConfig {
    pub workers: usize,
    pub shard_granularity: ShardGranularity,
}

impl Default for ParallelConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            shard_granularity: ShardGranularity::Auto,
        }
    }
}

impl ParallelConfig {
    pub fn with_workers(workers: usize) -> Self {
        Self {
            workers,
            ..Self::default()
        }
    }

    pub(crate) fn unit_workers(&self) -> usize {
        match self.shard_granularity {
            ShardGranularity::PerPoint => 1,
            _ => self.workers.max(1),
        }
    }

    pub(crate) fn point_workers(&self) -> usize {
        match self.shard_granularity {
            ShardGranularity::PerUnit => 1,
            _ => self.workers.max(1),
        }
    }

    pub(crate) fn candidate_workers(&self) -> usize {
        match self.shard_granularity {
            ShardGranularity::Auto => self.workers.max(1),
            _ => 1,
        }
    }
}

/// Runs `f(0), ..., f(tasks - 1)` on up to `workers` threads and returns the
/// results in index order. A panicking task is reported as
/// [`Error::WorkerPanic`] carrying the smallest failing index.
pub fn parallel_map<T, F>(tasks: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.max(1).min(tasks.max(1));
    if workers == 1 {
        let mut out = Vec::with_capacity(tasks);
        for i in 0..tasks {
            match catch_unwind(AssertUnwindSafe(|| f(i))) {
                Ok(v) => out.push(v),
                Err(_) => return Err(Error::WorkerPanic { index: i }),
            }
        }
        return Ok(out);
    }

    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<T>>> = (0..tasks).map(|_| Mutex::new(None)).collect();
    let failed = Mutex::new(None::<usize>);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= tasks {
                    break;
                }
                match catch_unwind(AssertUnwindSafe(|| f(i))) {
                    Ok(v) => *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(v),
                    Err(_) => {
                        let mut first = failed.lock().unwrap_or_else(|e| e.into_inner());
                        *first = Some(first.map_or(i, |j| j.min(i)));
                    }
                }
            });
        }
    });
    if let Some(index) = failed.into_inner().unwrap_or_else(|e| e.into_inner()) {
        return Err(Error::WorkerPanic { index });
    }
    Ok(slots
        .into_iter()
        .map(|s| {
            s.into_inner()
                .unwrap_or_else(|e| e.into_inner())
                .expect("every task index below `tasks` is processed exactly once")
        })
        .collect())
}

/// Like [`parallel_map`] for fallible tasks; the error of the smallest failing
/// index is returned.
pub(crate) fn try_parallel_map<T, F>(tasks: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    parallel_map(tasks, workers, f)?.into_iter().collect()
}
