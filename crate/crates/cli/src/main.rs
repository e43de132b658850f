//! Experiment runner. Exit status: 0 success, 1 runtime failure, 2 bad
//! arguments or configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};
use neurodecode::harness::{AblationVariant, OfflineMode};
use neurodecode::sim::DecoderKind;

use commands::{Common, DataSource};
use config::{parse_seeds, ExperimentConfig};

pub const OUT_DIR_ENV: &str = "NEURODECODE_OUT";

pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

#[derive(Parser)]
#[command(
    name = "neurodecode",
    version,
    about = "Online-adaptive SNN decoder experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file layered over the built-in defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Config override `key.path=value`, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seeds: `1,2,3`, `1..10` (inclusive) or a mix.
    #[arg(long, default_value = "1")]
    seeds: String,
    /// Output directory [env: NEURODECODE_OUT, default: results].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct DataArgs {
    /// Generate a synthetic dataset with this many bins.
    #[arg(long, value_name = "N_BINS")]
    synthetic: Option<usize>,
    /// Binned dataset CSV (with its .json header next to it).
    #[arg(long, value_name = "PATH")]
    dataset: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the online SNN on a binned dataset and report validation R.
    TrainOffline {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        /// batched or timestepwise [default: from config].
        #[arg(long)]
        mode: Option<String>,
        /// Also save a checkpoint per seed.
        #[arg(long)]
        save_checkpoints: bool,
    },
    /// Run a closed-loop reach protocol.
    ClosedLoop {
        #[command(flatten)]
        common: CommonArgs,
        /// disruption or nopretrain.
        #[arg(long)]
        protocol: String,
        /// remap, drift or dropout (disruption protocol only).
        #[arg(long, default_value = "remap")]
        disruption: String,
        /// Disruption intensity in [0, 1].
        #[arg(long, default_value_t = 0.9)]
        intensity: f64,
        /// Comma-separated subset of online_snn, bptt_snn, kalman.
        #[arg(long, default_value = "online_snn,bptt_snn,kalman")]
        decoders: String,
    },
    /// Print the analytic memory model, optionally with instrumented peaks.
    Memory {
        /// Layer sizes `in-h1-h2-out`.
        #[arg(long, default_value = "96-256-128-2")]
        arch: String,
        #[arg(long, default_value_t = 120)]
        timesteps: usize,
        /// Run instrumented online and BPTT passes as well.
        #[arg(long)]
        measure: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train learning-rule variants and tabulate validation R.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated variant names.
        #[arg(long)]
        variants: String,
    },
}

fn common(args: CommonArgs) -> Result<Common, Failure> {
    let config = ExperimentConfig::resolve(args.config.as_deref(), &args.overrides)
        .map_err(Failure::Usage)?;
    let seeds = parse_seeds(&args.seeds).map_err(Failure::Usage)?;
    let out = args
        .out
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"));
    Ok(Common { config, seeds, out })
}

fn source(d: DataArgs) -> DataSource {
    match (d.synthetic, d.dataset) {
        (Some(n), _) => DataSource::Synthetic(n),
        (None, Some(p)) => DataSource::File(p),
        (None, None) => unreachable!("clap enforces one data source"),
    }
}

fn list<T>(s: &str, what: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, Failure> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| parse(p).ok_or_else(|| Failure::Usage(anyhow!("unknown {what} '{p}'"))))
        .collect()
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::TrainOffline {
            common: c,
            data,
            mode,
            save_checkpoints,
        } => {
            let mode = mode
                .map(|m| m.parse::<OfflineMode>())
                .transpose()
                .map_err(|e| Failure::Usage(e.into()))?;
            commands::train_offline_cmd(&common(c)?, &source(data), mode, save_checkpoints)
        }
        Command::ClosedLoop {
            common: c,
            protocol,
            disruption,
            intensity,
            decoders,
        } => {
            let decoders = list(&decoders, "decoder", |p| {
                DecoderKind::ALL.into_iter().find(|d| d.as_str() == p)
            })?;
            if decoders.is_empty() {
                return Err(Failure::Usage(anyhow!("no decoders given")));
            }
            commands::closed_loop_cmd(&common(c)?, &protocol, &disruption, intensity, &decoders)
        }
        Command::Memory {
            arch,
            timesteps,
            measure,
            seed,
        } => commands::memory_cmd(&arch, timesteps, measure, seed),
        Command::Ablate {
            common: c,
            data,
            variants,
        } => {
            let variants = list(&variants, "ablation variant", |p| {
                p.parse::<AblationVariant>().ok()
            })?;
            commands::ablate_cmd(&common(c)?, &source(data), &variants)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
