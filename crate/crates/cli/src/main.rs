//! `cemtm`: train, extract topics, evaluate, retrieve examples, verify.
//!
//! Exit codes: 0 ok, 1 verification failure, 2 usage/config error,
//! 3 training divergence, 4 empty result.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Verification(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Diverged(String),
    #[error("{0}")]
    Empty(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Empty(_) => 4,
        }
    }
}

#[derive(Parser)]
#[command(name = "cemtm", version, about = "Context-enhanced multimodal topic model")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the pipeline commands; each overrides its config field.
#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus directory or manifest file.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for every random choice of the run.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run data-parallel loops on one thread.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of topics K.
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Seeded initializations tried; the lowest reconstruction loss wins.
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub common: Common,
    /// Expected K; must match the checkpoint.
    #[arg(long)]
    pub topics: Option<usize>,
    /// Checkpoint to read (default `<out>/model.ckpt`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Also score topics with the external LLM judge.
    #[arg(long)]
    pub llm: bool,
    /// word2vec text file for WE coherence.
    #[arg(long)]
    pub word_vectors: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SimilarityArg {
    Cosine,
    Js,
}

#[derive(Args, Debug)]
pub struct RetrieveArgs {
    /// θ index file (default `<out>/theta_index.json`).
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// doc_id of the query document.
    #[arg(long)]
    pub query: String,
    #[arg(long, default_value_t = cemtm::retrieval::DEFAULT_K)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = SimilarityArg::Cosine)]
    pub similarity: SimilarityArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FaultArg {
    KlSign,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Comma-separated groups (gradients, losses, simplex, metrics,
    /// retrieval, recovery); default all but recovery.
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<String>,
    /// Include the synthetic recovery group.
    #[arg(long)]
    pub all: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub sequential: bool,
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<FaultArg>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output corpus directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub topics: usize,
    #[arg(long, default_value_t = 200)]
    pub docs: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 20)]
    pub tokens: usize,
    /// Image-patch tokens per document.
    #[arg(long, default_value_t = 0)]
    pub patches: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write `model.ckpt` + `train_report.json`.
    Train(TrainArgs),
    /// Extract topic words and document assignments from a checkpoint.
    Extract(ExtractArgs),
    /// Compute the metric report for extracted topics.
    Eval(EvalArgs),
    /// Print the most topically similar documents to a query document.
    Retrieve(RetrieveArgs),
    /// Run the verification suites.
    Verify(VerifyArgs),
    /// Write a labeled synthetic corpus with planted topics.
    Synth(SynthArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Extract(a) => commands::extract(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Retrieve(a) => commands::retrieve(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::Synth(a) => commands::synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
