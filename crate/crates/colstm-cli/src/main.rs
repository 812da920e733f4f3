//! `colstm` — train, evaluate, and inspect co-occurrence-regularized
//! recurrent sequence classifiers from the command line.
//!
//! Every command is deterministic given its config and seed, and writes all
//! of its files under `--out`. Errors go to stderr with exit code 1;
//! `gradcheck` additionally exits 1 when the finite-difference comparison
//! breaches its tolerance.

mod commands;
mod config;
mod heatmap;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "colstm",
    version,
    about = "Recurrent sequence classifiers with co-occurrence-inducing sparsity"
)]
struct Cli {
    /// Directory all output files are written under (default: the config's
    /// out_dir, then "out").
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the config's seed (training, gradcheck probe, synthesis).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap the worker-thread count (0 keeps the library default). Results
    /// never depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes config echo, metrics stream, checkpoint, report.
    Train {
        /// Run configuration (JSON).
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on a labeled manifest; prints accuracy and
    /// writes the confusion matrix.
    Eval {
        /// Model container produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset manifest to score.
        #[arg(long)]
        data: PathBuf,
    },
    /// Compare analytic gradients against central finite differences on a
    /// conditioned probe of the configured architecture.
    Gradcheck {
        /// Run configuration (JSON); its `gradcheck` section sets the probe.
        #[arg(long)]
        config: PathBuf,
        /// Falsify one analytic entry first. Negative control: the command
        /// must then exit 1.
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Export |input weight| heatmaps of one recurrent layer's gate, both
    /// directions, as CSV and binary graymap.
    VizWeights {
        /// Model container produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Stack index of the recurrent layer to visualize.
        #[arg(long)]
        layer: usize,
        /// Gate whose input weights to export: i, f, c, or o.
        #[arg(long)]
        gate: String,
        /// Also export the per-group, per-channel RMS summary.
        #[arg(long)]
        group_average: bool,
        /// Group count for --group-average (default: the grouping recorded
        /// in the checkpoint's penalty config).
        #[arg(long)]
        groups: Option<usize>,
    },
    /// Export per-class joint co-activation heatmaps for a dataset.
    Cooccurrence {
        /// Dataset manifest.
        #[arg(long)]
        data: PathBuf,
        /// Class name to export (repeatable; default: every class).
        #[arg(long = "class")]
        classes: Vec<String>,
        /// Optional run config whose preprocessing chain is applied first.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Generate a synthetic labeled dataset: sequence files plus manifest.
    Synth {
        /// Synthesis spec (JSON).
        #[arg(long)]
        spec: PathBuf,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global()?;
    }
    let out = cli.out.as_deref();
    let fixed_out = || cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    match &cli.command {
        Command::Train { config } => commands::train(config, cli.seed, out)?,
        Command::Eval { checkpoint, data } => commands::eval(checkpoint, data, &fixed_out())?,
        Command::Gradcheck { config, corrupt_gradient } => {
            if !commands::gradcheck(config, cli.seed, *corrupt_gradient)? {
                return Ok(ExitCode::from(1));
            }
        }
        Command::VizWeights { checkpoint, layer, gate, group_average, groups } => {
            commands::viz_weights(checkpoint, *layer, gate, *group_average, *groups, &fixed_out())?
        }
        Command::Cooccurrence { data, classes, config } => {
            commands::cooccurrence(data, classes, config.as_deref(), out)?
        }
        Command::Synth { spec } => commands::synth(spec, cli.seed, &fixed_out())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
