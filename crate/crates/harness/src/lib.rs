//! Experiment harness: datasets, synthetic data, configuration, experiment
//! runs with their artifacts, and the parallel speedup benchmark.

pub mod bench;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod pca;
pub mod pgm;
pub mod synth;

pub use error::{HarnessError, Result};
