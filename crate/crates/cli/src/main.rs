use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use genemeta::TrainerKind;

mod commands;
mod config;

use config::Overrides;

/// Meta-learned cancer classifiers from gene-expression datasets.
#[derive(Parser)]
#[command(name = "genemeta", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for folds and λ points.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct TrainFlags {
    /// Trainer: meta, plain or transfer.
    #[arg(long)]
    trainer: Option<TrainerKind>,
    /// Weight of the target loss in the meta objective.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Select shared genes, normalize, and export the projected datasets.
    Preprocess,
    /// Train one model on the target's training split and save a checkpoint.
    Train(TrainFlags),
    /// Cross-validate the configured trainer.
    Evaluate {
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Cross-validate meta-learning at each λ.
    Sweep {
        /// Comma-separated λ values, each in [0,1].
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Shapley attributions for held-out target samples.
    Explain(commands::ExplainArgs),
    /// Generate a synthetic task family as expression TSV files.
    Synth(commands::SynthArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let mut ov = Overrides {
        seed: cli.seed,
        jobs: cli.jobs,
        out: cli.out.clone(),
        ..Overrides::default()
    };
    let config = cli.config.as_deref();
    let result = match cli.command {
        Command::Preprocess => commands::preprocess(config, &ov),
        Command::Train(t) => {
            apply_train(&mut ov, t);
            commands::train(config, &ov)
        }
        Command::Evaluate { train, folds } => {
            apply_train(&mut ov, train);
            ov.folds = folds;
            commands::evaluate(config, &ov)
        }
        Command::Sweep { lambdas, folds, epochs } => {
            ov.lambdas = lambdas;
            ov.folds = folds;
            ov.epochs = epochs;
            commands::sweep(config, &ov)
        }
        Command::Explain(args) => commands::explain(config, &ov, &args),
        Command::Synth(args) => commands::synth(&ov, &args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn apply_train(ov: &mut Overrides, t: TrainFlags) {
    ov.trainer = t.trainer;
    ov.lambda = t.lambda;
    ov.epochs = t.epochs;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] genemeta::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 3 for numerical/training failures, 2 for everything else.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}
