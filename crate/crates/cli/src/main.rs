//! smoothlab: edge-preserving image smoothing from the command line.
//!
//! Subcommands: `smooth` (direct solvers or a trained CNN), `train`,
//! `eval`, `precompute`, `compare-solvers`. Exit codes: 0 success,
//! 2 bad flags/parameters, 3 I/O or format failure, 4 solver failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{
    cmd_compare_solvers, cmd_eval, cmd_precompute, cmd_smooth, cmd_train, exit_code,
    CompareOpts, EvalOpts, PrecomputeOpts, SmoothOpts, TrainOpts,
};

#[derive(Parser)]
#[command(name = "smoothlab", version, about = "Edge-preserving image smoothing")]
struct Cli {
    /// Worker pool size for multi-image commands (env: SMOOTHLAB_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Smooth one image with a direct solver or a trained network.
    Smooth {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// gd | irls | cnn
        #[arg(long)]
        solver: String,
        /// flatten | abstract | detail | texture | content_bg | content_fg
        #[arg(long)]
        preset: Option<String>,
        /// JSON config with energy/gd/irls overrides.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Model file (required for --solver cnn).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Saliency mask (required for content_* presets).
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Write the per-iteration energy trace CSV here.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a network on an image corpus (unsupervised).
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Checkpoint/log output directory.
        #[arg(long)]
        out: PathBuf,
        /// toy8 | paper26
        #[arg(long, default_value = "toy8")]
        net: String,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        crop: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
        #[arg(long)]
        steps_per_epoch: Option<usize>,
        /// Overfit on this single image instead of the corpus.
        #[arg(long)]
        overfit_single: Option<PathBuf>,
    },
    /// Score a trained model on every image in a directory.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        images: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        preset: Option<String>,
    },
    /// Build (or refresh) the per-image guidance cache for a corpus.
    Precompute {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "flatten")]
        preset: String,
    },
    /// Run {gd, irls, cnn-overfit} x {p-map modes} and emit loss curves.
    CompareSolvers {
        #[arg(long)]
        images: PathBuf,
        /// Output directory for per-cell CSVs and the summary.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn resolve_threads(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("SMOOTHLAB_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(1)
    .max(1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = resolve_threads(cli.threads);
    let result = match cli.command {
        Command::Smooth {
            input,
            output,
            solver,
            preset,
            config,
            model,
            mask,
            trace,
            seed,
        } => cmd_smooth(&SmoothOpts {
            input,
            output,
            solver,
            preset,
            config,
            model,
            mask,
            trace,
            seed,
            threads,
        }),
        Command::Train {
            corpus,
            out,
            net,
            preset,
            config,
            epochs,
            crop,
            lr,
            seed,
            checkpoint_every,
            steps_per_epoch,
            overfit_single,
        } => cmd_train(&TrainOpts {
            corpus,
            out,
            net,
            preset,
            config,
            epochs,
            crop,
            learning_rate: lr,
            seed,
            checkpoint_every,
            steps_per_epoch,
            overfit_single,
            threads,
        }),
        Command::Eval {
            model,
            images,
            out,
            preset,
        } => cmd_eval(&EvalOpts {
            model,
            images,
            out,
            preset,
            threads,
        }),
        Command::Precompute { corpus, preset } => cmd_precompute(&PrecomputeOpts {
            corpus,
            preset,
            threads,
        }),
        Command::CompareSolvers {
            images,
            out,
            config,
            seed,
        } => cmd_compare_solvers(&CompareOpts {
            images,
            out,
            config,
            seed,
            threads,
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
