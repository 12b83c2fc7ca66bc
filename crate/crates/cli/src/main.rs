use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use phantomnet_cli::commands::{self, Relaxation, RunOptions};
use phantomnet_cli::exit_code;

#[derive(Parser)]
#[command(name = "phantomnet", version, about = "Incremental learning with phantom sampling")]
struct Cli {
    #[command(subcommand)]
    kind: Kind,
}

#[derive(clap::Args)]
struct Common {
    /// JSON configuration for the run.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Explicitly allow `p` old-class samples per class to cross sites.
    #[arg(long, value_name = "p=N")]
    allow_relaxation: Option<Relaxation>,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Kind {
    /// Train the base classifier and GAN.
    BaseTrain(Common),
    /// Seal a classifier and GAN checkpoint into a broadcast bundle.
    Broadcast(Common),
    /// Phantom-sampling increment from a bundle.
    Increment(Common),
    /// Increment on new-class data only.
    BaselineNaive(Common),
    /// Increment with old-class exemplars (needs --allow-relaxation).
    BaselineExemplar(Common),
    /// Several increments in sequence.
    Continual(Common),
    /// Accuracy and confusion matrix of a saved model.
    Evaluate(Common),
    /// Finite-difference check over random networks.
    GradientCheck(Common),
    /// Base training plus every baseline over seeds and settings.
    Sweep(Common),
    /// Merge run reports into one table.
    Report {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, short)]
        quiet: bool,
        /// Report files or run directories.
        runs: Vec<PathBuf>,
    },
}

fn options(c: Common) -> RunOptions {
    RunOptions {
        config: c.config,
        seed: c.seed,
        out: c.out,
        relaxation: c.allow_relaxation,
        quiet: c.quiet,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, opts, runs) = match cli.kind {
        Kind::Report { config, out, quiet, runs } => {
            let opts = RunOptions {
                config: config.unwrap_or_default(),
                seed: None,
                out,
                relaxation: None,
                quiet,
            };
            ("report", opts, runs)
        }
        Kind::BaseTrain(c) => ("base-train", options(c), vec![]),
        Kind::Broadcast(c) => ("broadcast", options(c), vec![]),
        Kind::Increment(c) => ("increment", options(c), vec![]),
        Kind::BaselineNaive(c) => ("baseline-naive", options(c), vec![]),
        Kind::BaselineExemplar(c) => ("baseline-exemplar", options(c), vec![]),
        Kind::Continual(c) => ("continual", options(c), vec![]),
        Kind::Evaluate(c) => ("evaluate", options(c), vec![]),
        Kind::GradientCheck(c) => ("gradient-check", options(c), vec![]),
        Kind::Sweep(c) => ("sweep", options(c), vec![]),
    };
    let outcome = std::fs::create_dir_all(&opts.out)
        .map_err(|e| phantomnet::Error::Io {
            path: opts.out.clone(),
            source: e,
        })
        .and_then(|()| match kind {
            "base-train" => commands::base_train(&opts),
            "broadcast" => commands::broadcast(&opts),
            "increment" | "baseline-naive" | "baseline-exemplar" => commands::increment(&opts, kind),
            "continual" => commands::continual(&opts),
            "evaluate" => commands::evaluate_model(&opts),
            "gradient-check" => commands::gradient_check(&opts),
            "sweep" => commands::sweep(&opts),
            _ => commands::report(&opts, &runs),
        });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
