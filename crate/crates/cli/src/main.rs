//! `mpar`: generate synthetic data, validate files, train, search,
//! evaluate, predict and report.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or
//! validation errors. Errors are printed as one `error[<kind>]: <message>`
//! line on stderr.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "mpar", version, about = "Skeleton-based motion-class recognition for manual processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset with ground-truth KPI sheets.
    Synth(SynthArgs),
    /// Validate frame-record and label files (and optionally a run config).
    Check(CheckArgs),
    /// Train a model from a run config; writes the container and history CSV.
    Train(TrainArgs),
    /// Hyperparameter search; writes the run log and the best config.
    Search(SearchArgs),
    /// Evaluate a model on labeled data; writes the report bundle.
    Eval(EvalArgs),
    /// Per-frame predictions for a frame-record stream.
    Predict(PredictArgs),
    /// Render a search log or training history as CSV and SVG.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic spec TOML; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CheckArgs {
    /// Dataset directory or a single `*.frames.csv` file.
    #[arg(long)]
    data: PathBuf,
    /// Run config to validate as well.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target frame rate for the window count (default: config or 30).
    #[arg(long)]
    fps: Option<u32>,
    /// Window length in frames at the target rate (default: config or 104).
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Run config TOML (default settings when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory; overrides the config's `data`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model container path; the history is written next to it.
    #[arg(long, default_value = "model.mpar")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the window frame rate.
    #[arg(long)]
    fps: Option<u32>,
    /// Overrides the window length.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Random,
    SurrogateGuided,
}

#[derive(Args)]
struct SearchArgs {
    /// Parameter space TOML (default: the 26-dimension pipeline space).
    #[arg(long)]
    space: Option<PathBuf>,
    /// Base run config the sampled values are applied to.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory; overrides the config's `data`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for the run log, stage spaces and best config.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Concurrent trials. Results do not depend on this value.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::SurrogateGuided)]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 1)]
    stages: usize,
    #[arg(long, default_value_t = 0.2)]
    top_quantile: f64,
    /// Longest window history in seconds.
    #[arg(long, default_value_t = 3.5)]
    max_history: f64,
    /// Disables the history limit.
    #[arg(long)]
    no_history_limit: bool,
    /// Restricts the search to per-skeleton normalization.
    #[arg(long)]
    generalization_only: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Model container.
    #[arg(long)]
    model: PathBuf,
    /// Labeled dataset directory or `*.frames.csv` file.
    #[arg(long)]
    data: PathBuf,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
    /// Expected frame rate; must match the model.
    #[arg(long)]
    fps: Option<u32>,
    /// Expected window length; must match the model.
    #[arg(long)]
    window: Option<usize>,
    /// Cycle anchor class (default: best-recalled non-error class).
    #[arg(long)]
    anchor_class: Option<u8>,
    /// Transition margin in evaluated frames.
    #[arg(long, default_value_t = 15)]
    margin: usize,
    /// Majority-smoothing window (odd) applied before cycle extraction.
    #[arg(long, default_value_t = 15)]
    smooth: usize,
    /// Temporal-profile bins per segment.
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Restricts evaluation to these workers (repeatable).
    #[arg(long = "worker")]
    workers: Vec<String>,
}

#[derive(Args)]
struct PredictArgs {
    /// Model container.
    #[arg(long)]
    model: PathBuf,
    /// Frame-record CSV; `-` reads stdin.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// A search run log (`.jsonl`) or a training history CSV.
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Check(a) => commands::check(a),
        Command::Train(a) => commands::train(a),
        Command::Search(a) => commands::search(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error[{}]: {message}", e.kind());
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
