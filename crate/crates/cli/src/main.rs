use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod report;
mod run;

#[derive(Parser)]
#[command(name = "normlab", version, about = "Normalization-layer experiments: simulator, gradient checks, training and angle metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum LogFormatArg {
    Csv,
    Jsonl,
}

#[derive(Subcommand)]
enum Command {
    /// Iterate a normalization map over class centers and record the minimum pairwise angle.
    Sim {
        #[arg(long, value_parser = ["bn", "l2bn"])]
        norm: String,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Epsilon added to the variance in the batch-normalization step.
        #[arg(long, default_value_t = 0.0)]
        eps_var: f64,
        /// Run directory for trajectory.csv and manifest.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a layer's analytic gradients with central finite differences.
    Gradcheck {
        /// Layer kind: l2, bn, ln, in, pn, gn[:k], l2bn, lnbn, inbn, pnbn.
        #[arg(long)]
        layer: String,
        /// Input shape, e.g. 6,4 or 4x3x2x2.
        #[arg(long, default_value = "6,4")]
        shape: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
    /// Train a classifier from a TOML config and write log, checkpoint and manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        log_format: LogFormatArg,
    },
    /// Angle metrics of labeled feature vectors stored as CSV.
    Angles {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels_column: String,
        /// Features measured against the centers of --features.
        #[arg(long)]
        test_features: Option<PathBuf>,
    },
    /// Per-epoch and final differences between two training runs (b minus a).
    Compare {
        #[arg(long)]
        run_a: PathBuf,
        #[arg(long)]
        run_b: PathBuf,
    },
    /// Write a synthetic 10-class image set in IDX format.
    SynthIdx {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        #[arg(long, default_value_t = 50)]
        test_per_class: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    normlab::par::init_from_env();
    let result = match cli.command {
        Command::Sim {
            norm,
            classes,
            dim,
            iters,
            seed,
            eps_var,
            out,
        } => run::sim(&norm, classes, dim, iters, seed, eps_var, &out).map(|_| true),
        Command::Gradcheck { layer, shape, seed, tol } => run::gradcheck(&layer, &shape, seed, tol),
        Command::Train {
            config,
            out,
            log_format,
        } => run::train(&config, &out, log_format).map(|_| true),
        Command::Angles {
            features,
            labels_column,
            test_features,
        } => report::angles(&features, &labels_column, test_features.as_deref()).map(|_| true),
        Command::Compare { run_a, run_b } => report::compare(&run_a, &run_b).map(|_| true),
        Command::SynthIdx {
            out,
            seed,
            per_class,
            test_per_class,
        } => run::synth_idx(&out, seed, per_class, test_per_class).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
