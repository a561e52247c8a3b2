use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use log::info;
use macqp_core::checkpoint::load_checkpoint;
use macqp_core::model::nested_objective_on;
use macqp_harness::bench::{speedup_bench, write_bench_csv};
use macqp_harness::config::ExperimentConfig;
use macqp_harness::dataset::{load_dataset, save_dataset, DataFormat};
use macqp_harness::experiment::run_experiment;
use macqp_harness::synth::{synth_manifold_dataset, SynthConfig};

#[derive(Parser)]
#[command(name = "macqp", version, about = "Train nested models with auxiliary coordinates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the output directory of the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Time one experiment at several worker counts and check the models agree.
    BenchParallel {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        workers: Vec<usize>,
        /// CSV table; defaults to bench.csv in the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Nested error of a saved model on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Input columns of a csv file without x-prefixed headers.
        #[arg(long)]
        input_dim: Option<usize>,
    },
    /// Write a synthetic manifold dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        ambient_dim: usize,
        #[arg(long, default_value_t = 2)]
        intrinsic_dim: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Csv,
    F64bin,
}

fn format_for(arg: Option<FormatArg>, path: &std::path::Path) -> DataFormat {
    match arg {
        Some(FormatArg::Csv) => DataFormat::Csv,
        Some(FormatArg::F64bin) => DataFormat::F64bin,
        None => DataFormat::from_path(path),
    }
}

/// Worker count from MAC_WORKERS, when set.
fn env_workers() -> anyhow::Result<Option<usize>> {
    match std::env::var("MAC_WORKERS") {
        Ok(v) => {
            let w: usize = v.trim().parse().with_context(|| format!("MAC_WORKERS={v}"))?;
            if w == 0 {
                bail!("MAC_WORKERS must be at least 1");
            }
            Ok(Some(w))
        }
        Err(_) => Ok(None),
    }
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train { config, output_dir } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            if let Some(w) = env_workers()? {
                cfg.parallel.workers = w;
            }
            let out = run_experiment(&cfg)?;
            println!("{}", out.final_e1());
        }
        Command::BenchParallel { config, workers, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let rows = speedup_bench(&cfg, &workers)?;
            let path = match out {
                Some(p) => p,
                None => {
                    std::fs::create_dir_all(&cfg.output_dir)?;
                    cfg.output_dir.join("bench.csv")
                }
            };
            write_bench_csv(&path, &rows)?;
            for r in &rows {
                println!("{} workers: {:.3} s, speedup {:.2}", r.workers, r.seconds, r.speedup);
            }
            println!("checkpoints identical: {}", rows[0].digest);
        }
        Command::Eval {
            model,
            data,
            format,
            input_dim,
        } => {
            let net = load_checkpoint(&model)?;
            let s = load_dataset(&data, format_for(format, &data), input_dim.or(Some(net.input_dim())))?;
            let e1 = nested_objective_on(&net, &s.x, &s.y)?;
            println!("{e1}");
        }
        Command::Synth {
            out,
            n,
            ambient_dim,
            intrinsic_dim,
            noise,
            seed,
            format,
        } => {
            let s = synth_manifold_dataset(&SynthConfig {
                n,
                ambient_dim,
                intrinsic_dim,
                noise,
                seed,
            })?;
            save_dataset(&out, format_for(format, &out), &s.x, &s.x)?;
            info!("wrote {n} points to {}", out.display());
        }
    }
    Ok(())
}
