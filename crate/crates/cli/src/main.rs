//! `calli`: dataset generation, training, prediction, evaluation, pilots
//! and statistics from one binary.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit codes: 2 usage, 3 input, 4 capacity, 5 internal.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            kind: "usage",
            message: message.into(),
        }
    }
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            kind: "input",
            message: message.into(),
        }
    }
    pub fn internal(message: impl Into<String>) -> Self {
        CliError {
            code: 5,
            kind: "internal",
            message: message.into(),
        }
    }
}

impl From<calli_core::Error> for CliError {
    fn from(e: calli_core::Error) -> Self {
        use calli_core::Error as E;
        let (code, kind) = match &e {
            E::Parse { .. } | E::Io { .. } | E::Json(_) | E::InvalidInput(_) => (3, "input"),
            E::Format { .. } => (3, "format"),
            E::Capacity(_) => (4, "capacity"),
            E::Dimension(_) | E::Numerical(_) => (5, "internal"),
        };
        CliError {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "calli",
    version,
    about = "Reading order, embedding alignment and recognition metrics for calligraphy pages"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Config file (TOML, or a run.json from an earlier run).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed and CALLI_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic page dataset.
    Gen(GenArgs),
    /// Train the column-ordering transformer on a dataset.
    TrainOrder(TrainOrderArgs),
    /// Train the character-to-embedding resampler.
    TrainAlign(TrainAlignArgs),
    /// Print the boxes of one page in predicted reading order.
    Order(OrderArgs),
    /// Score a predictions file against a dataset.
    Eval(EvalArgs),
    /// Score predicted reading orders against a dataset.
    EvalOrder(EvalOrderArgs),
    /// Decode characters through a trained resampler.
    DecodeAlign(DecodeAlignArgs),
    /// Pilot studies.
    #[command(subcommand)]
    Pilot(PilotCommand),
    /// Dataset statistics.
    Stats(StatsArgs),
}

#[derive(Args)]
pub struct GenArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of pages (overrides the config).
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Args)]
pub struct TrainOrderArgs {
    /// Dataset directory; its train split is used.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Use at most this many training pages.
    #[arg(long)]
    pub max_pages: Option<usize>,
}

#[derive(Args)]
pub struct TrainAlignArgs {
    /// Output directory (model/, table/, report.json).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Args)]
pub struct OrderArgs {
    /// A LabelMe JSON file or a page JSON file.
    pub page: PathBuf,
    /// OrderFormer checkpoint; without it the rule baseline is used.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Predictions JSONL.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Ground truth: a dataset directory or a directory of LabelMe files.
    #[arg(long)]
    pub data: PathBuf,
    /// Restrict to one split of a dataset directory.
    #[arg(long)]
    pub split: Option<String>,
    /// Tier label recorded in the report (easy, medium, hard).
    #[arg(long)]
    pub tier: Option<String>,
    /// Directory for report.json and run.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalOrderArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// OrderFormer checkpoint; without it only the rule baseline is scored.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct DecodeAlignArgs {
    /// Directory written by train-align.
    #[arg(long)]
    pub model: PathBuf,
    /// Character ids to synthesize and decode (comma separated).
    #[arg(long, value_delimiter = ',', conflicts_with = "features")]
    pub chars: Vec<usize>,
    /// JSON file holding `{"features": [[[f32; width]; tokens], ...]}`.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Directory for report.json and run.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PilotCommand {
    /// Decode fidelity under Gaussian noise over a (mu, sigma) grid.
    Noise(PilotOutArgs),
    /// Character fragmentation under the four slicing policies.
    Slicing(SlicingArgs),
}

#[derive(Args)]
pub struct PilotOutArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SlicingArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Characters per fixture (overrides the config).
    #[arg(long)]
    pub chars: Option<usize>,
}

#[derive(Args)]
pub struct StatsArgs {
    /// A dataset directory or a directory of LabelMe files.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::internal(e.to_string()))?;
    }
    let cfg = match &cli.config {
        Some(p) => config::RunConfig::load(p)?,
        None => config::RunConfig::default(),
    }
    .resolve(cli.seed)?;
    match cli.command {
        Command::Gen(a) => commands::gen(&cfg, a),
        Command::TrainOrder(a) => commands::train_order(cfg, a),
        Command::TrainAlign(a) => commands::train_align(cfg, a),
        Command::Order(a) => commands::order(&cfg, a),
        Command::Eval(a) => commands::eval(&cfg, a),
        Command::EvalOrder(a) => commands::eval_order(&cfg, a),
        Command::DecodeAlign(a) => commands::decode_align(&cfg, a),
        Command::Pilot(PilotCommand::Noise(a)) => commands::pilot_noise(&cfg, a),
        Command::Pilot(PilotCommand::Slicing(a)) => commands::pilot_slicing(cfg, a),
        Command::Stats(a) => commands::stats(&cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help and version go to stdout with status 0; real errors exit 2.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind, "code": e.code, "message": e.message.replace('\n', " ") });
            eprintln!("{line}");
            ExitCode::from(e.code)
        }
    }
}
