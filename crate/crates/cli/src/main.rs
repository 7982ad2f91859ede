//! `msnet`: train, evaluate and check MSNet models from the command line.
//!
//! Exit codes: 0 success, 1 failed check, 2 usage or configuration error,
//! 3 numerical abort.

mod commands;
mod run_config;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use msnet_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "msnet",
    version,
    about = "Multi-scale submanifold networks on SPD matrices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on an SPDS dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on an SPDS dataset.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Write the planted-window synthetic dataset.
    Synth(SynthArgs),
    /// Turn a SEQF raw-sequence file into covariance descriptors.
    Preprocess(PreprocessArgs),
    /// Print the header and contents summary of an SPDS, SEQF or MSNC file.
    Inspect(InspectArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ThreadArgs {
    /// Worker threads for per-sample work; 1 is strictly serial and deterministic.
    #[arg(long, env = "MSNET_THREADS", default_value_t = 1)]
    pub threads: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML run file with [model] and optional [run] sections.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<std::path::PathBuf>,
    /// Built-in configuration: cg, fpha or ucf-sub.
    #[arg(long)]
    pub preset: Option<String>,
    /// Resume from this checkpoint; its config is used, with overrides applied.
    #[arg(long, conflicts_with_all = ["config", "preset"])]
    pub resume: Option<std::path::PathBuf>,
    /// Training dataset (SPDS).
    #[arg(long)]
    pub data: Option<std::path::PathBuf>,
    /// Output directory for metrics.csv and model.msnc.
    #[arg(long)]
    pub out_dir: Option<std::path::PathBuf>,
    /// Write the checkpoint every N epochs (0: only at the end).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Comma-separated window sides, e.g. 2,4.
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<usize>>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[command(flatten)]
    pub threads: ThreadArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: std::path::PathBuf,
    #[arg(long)]
    pub data: std::path::PathBuf,
    /// Write the confusion matrix (rows true class, columns predicted) as CSV.
    #[arg(long)]
    pub confusion: Option<std::path::PathBuf>,
    #[command(flatten)]
    pub threads: ThreadArgs,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Layer name (bimap, reeig, logeig, subsec, trilcan, fc, softmax-ce), `layers`
    /// for all of them, or `network`.
    pub scope: String,
    /// Layer shape, comma-separated (see the layer list for meaning).
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    /// ReEig threshold for the reeig layer check.
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    /// Number of seeds, starting at --first-seed.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
    /// Relative tolerance (default 1e-6 for bimap/fc, 1e-5 for other layers, 1e-4 for the network).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    /// Network variant (network scope only).
    #[arg(long, default_value = "MS")]
    pub variant: String,
    /// Use the 3x3-grid tiny network instead of the 2x2 one (network scope only).
    #[arg(long)]
    pub d3: bool,
    /// Samples per batch (network scope only).
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Halve the BiMap weight gradients to show the check catches it (network scope only).
    #[arg(long)]
    pub planted_bug: bool,
    /// Also write the report as CSV.
    #[arg(long)]
    pub csv: Option<std::path::PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: std::path::PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    /// Grid side d; matrices are d² x d².
    #[arg(long, default_value_t = 4)]
    pub grid: usize,
    #[arg(long, default_value_t = 64)]
    pub frames: usize,
    /// Loading rank (default d²).
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Input SEQF file.
    #[arg(long)]
    pub input: std::path::PathBuf,
    #[arg(long)]
    pub out: std::path::PathBuf,
    /// Project frames onto this many principal components; omit to use raw frames.
    #[arg(long)]
    pub pca_dim: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    /// Fit PCA on the training side of a per-class seventy-thirty split with this
    /// seed instead of on every sequence.
    #[arg(long)]
    pub fit_split_seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    pub path: std::path::PathBuf,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub enum Failure {
    Check(String),
    Usage(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Check(m) | Failure::Usage(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e.root() {
            Error::NumericalAbort { .. } => Failure::Numerical(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

pub type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = std::panic::catch_unwind(|| match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Synth(a) => commands::synth(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Inspect(a) => commands::inspect(a),
    });
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(f)) => {
            eprintln!("msnet: {}", f.message());
            ExitCode::from(f.code())
        }
        Err(_) => ExitCode::from(1),
    }
}
