mod commands;
mod gateway;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gateway::GatewayArgs;

/// Exit status 2: the run could not start.
pub const EXIT_CONFIG: u8 = 2;
/// Exit status 3: the run finished but some items failed.
pub const EXIT_PARTIAL: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn partial(message: impl Into<String>) -> Self {
        Self { code: EXIT_PARTIAL, message: message.into() }
    }
}

#[derive(Debug, Parser)]
#[command(name = "eel", version, about = "Explore tool-use executions, distill experience, reuse it at inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    /// JSON run configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub branch_slots: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub parallel: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run exploration episodes over a learning corpus and grow the store.
    Explore {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
        #[command(flatten)]
        gateway: GatewayArgs,
        #[arg(long)]
        trace_dir: Option<PathBuf>,
        /// Directory for run_summary.json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Predict with retrieved experience; the store is only read.
    Infer {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
        #[command(flatten)]
        gateway: GatewayArgs,
        #[arg(long)]
        trace_dir: Option<PathBuf>,
        /// Predictions file.
        #[arg(long, default_value = "predictions.jsonl")]
        out: PathBuf,
    },
    /// Score predictions against corpus targets, per scope.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// JSON object mapping scope to the exclusion threshold.
        #[arg(long)]
        threshold_file: Option<PathBuf>,
        #[arg(long, default_value = "scores.json")]
        out: PathBuf,
    },
    /// Monte Carlo usage concentration with dropout on and off.
    SimulateDropout {
        /// JSON scenario; the biased twelve-tool pool when absent.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        alpha: Option<f64>,
        /// Directory for dropout_diag.csv and dropout_diag.json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Per-scope audit of a store.
    Report {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic corpus.
    GenCorpus {
        /// JSON synthetic spec. Without it one seasonal family is built
        /// from --count, --seed and --tag.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "syn")]
        tag: String,
        /// Omit targets from the written samples.
        #[arg(long)]
        no_truth: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-execute recorded tool calls and compare artifacts.
    Replay {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Corpus with targets, for verifying evaluator results.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Contract verdicts and target-leak scan over traces.
    Lint {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("EEL_LOG").unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Explore { corpus, store, engine, gateway, trace_dir, out } => {
            commands::explore(&corpus, &store, &engine, &gateway, trace_dir.as_deref(), &out)
        }
        Command::Infer { corpus, store, engine, gateway, trace_dir, out } => {
            commands::infer(&corpus, &store, &engine, &gateway, trace_dir.as_deref(), &out)
        }
        Command::Eval { predictions, corpus, threshold_file, out } => {
            commands::eval(&predictions, &corpus, threshold_file.as_deref(), &out)
        }
        Command::SimulateDropout { scenario, seeds, seed, alpha, out } => {
            commands::simulate(scenario.as_deref(), seed, seeds, alpha, &out)
        }
        Command::Report { store, out } => commands::report(&store, out.as_deref()),
        Command::GenCorpus { spec, count, seed, tag, no_truth, out } => {
            commands::gen_corpus(spec.as_deref(), count, seed, &tag, !no_truth, &out)
        }
        Command::Replay { traces, corpus } => commands::replay(&traces, corpus.as_deref()),
        Command::Lint { traces, corpus } => commands::lint(&traces, corpus.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("eel: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
