//! `dpi`: train, evaluate and probe the drug–protein interaction model.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "dpi", version, about = "Bayesian drug–protein interaction prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file plus overrides, shared by every model-building command.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable (`--set epochs=20`).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Protein embedding file (`#dim=d` header, `id<TAB>values`).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// MC-dropout passes; 0 scores with one deterministic pass.
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model; writes checkpoint.bin, history.csv and metrics.json.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Training table, or the whole dataset when no --valid/--test.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, requires = "test")]
        valid: Option<PathBuf>,
        #[arg(long, requires = "valid")]
        test: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics with the seen/unseen breakdown for a labelled table.
    Evaluate(EvalArgs),
    /// Per-pair probabilities and uncertainties.
    Predict(EvalArgs),
    /// ROC-AUC under Gaussian noise on the protein embeddings.
    NoiseSweep {
        #[command(flatten)]
        eval: EvalArgs,
        /// Comma-separated noise levels.
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
        #[arg(long)]
        noise_seed: Option<u64>,
    },
    /// Retrain on nested fractions of the training set.
    SizeSweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy over the most confident test points, per decile.
    ConfidenceCurve {
        #[command(flatten)]
        eval: EvalArgs,
        /// epistemic, aleatoric or total; all three when omitted.
        #[arg(long)]
        kind: Option<String>,
    },
    /// Parse one SMILES string and report its graph.
    ParseSmiles { smiles: String },
    /// Write a planted-rule synthetic dataset.
    GenSynthetic {
        #[arg(long, default_value_t = 2000)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Label flip probability.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(dpi_core::Error),
    Runtime(String),
}

impl From<dpi_core::Error> for Failure {
    fn from(e: dpi_core::Error) -> Self {
        Failure::Core(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train { cfg, data, valid, test, out } => commands::train(&cfg, &data, valid.zip(test), &out),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::NoiseSweep { eval, sigmas, noise_seed } => commands::noise_sweep(&eval, sigmas, noise_seed),
        Command::SizeSweep { cfg, data, fractions, out } => commands::size_sweep(&cfg, &data, fractions, &out),
        Command::ConfidenceCurve { eval, kind } => commands::confidence_curve(&eval, kind.as_deref()),
        Command::ParseSmiles { smiles } => commands::parse_smiles(&smiles),
        Command::GenSynthetic { pairs, seed, noise, out } => commands::gen_synthetic(pairs, seed, noise, out.as_deref()),
    };
    match result {
        Ok(json) => {
            if !json.is_empty() {
                commands::emit(&format!("{json}\n"));
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{}", Cli::command().render_usage());
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            match e {
                dpi_core::Error::Config(_) => ExitCode::from(1),
                e if e.is_data_error() => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
