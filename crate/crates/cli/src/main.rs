//! `tnf`: dataset generation, training, evaluation and explanation runs.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data or I/O
//! error, 1 anything else.

mod commands;
mod context;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tnf_core::data::Split;
use tnf_core::train::Modality;
use tnf_core::Error;

#[derive(Parser, Debug)]
#[command(name = "tnf", version, about = "Tri-branch image+tabular classification runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset and its manifest.
    GenData(GenDataArgs),
    /// Train a model; writes a checkpoint, epoch logs and the resolved config.
    Train(TrainArgs),
    /// Metrics of the ensemble and of every branch on one split.
    Eval(EvalArgs),
    /// Per-case predictions on one split.
    Infer(EvalArgs),
    /// Grad-CAM heatmap of one case.
    Gradcam(GradcamArgs),
    /// Exact Shapley importance of the tabular attributes.
    Shapley(ShapleyArgs),
    /// ROC and precision-recall points.
    Roc(RocArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Run config; its `[data.synth]` table drives the generator.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: `output.dir`, then `data`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the generator seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: `output.dir`, then `run`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset directory, overriding `data.path`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Override `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Directory written by `tnf train`.
    #[arg(long)]
    run: PathBuf,
    /// Checkpoint to load instead of `<run>/model.tnfc`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory, overriding the run config's data source.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    /// Output directory (default: the run directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Evaluate without one modality (and hence without the fusion branch).
    #[arg(long, value_parser = parse_modality)]
    drop_modality: Option<Modality>,
}

#[derive(Args, Debug)]
struct GradcamArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Case id.
    #[arg(long)]
    case: u64,
    /// `image` or `fusion`.
    #[arg(long, default_value = "fusion")]
    branch: String,
    /// Target class (default: the predicted class of that branch).
    #[arg(long)]
    class: Option<usize>,
    /// Conv stage (default: the last).
    #[arg(long)]
    layer: Option<usize>,
}

#[derive(Args, Debug)]
struct ShapleyArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated attribute ids (default: all, at most 16).
    #[arg(long, value_delimiter = ',')]
    attrs: Option<Vec<usize>>,
    /// Also print the `k` most important attributes.
    #[arg(long)]
    top_k: Option<usize>,
}

#[derive(Args, Debug)]
struct RocArgs {
    #[command(flatten)]
    run: RunArgs,
    /// `ensemble`, `image`, `tabular` or `fusion`.
    #[arg(long, default_value = "ensemble")]
    branch: String,
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_modality(s: &str) -> Result<Modality, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else if e.is_data() {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Infer(a) => commands::infer(a),
        Command::Gradcam(a) => commands::gradcam(a),
        Command::Shapley(a) => commands::shapley(a),
        Command::Roc(a) => commands::roc(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tnf: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
