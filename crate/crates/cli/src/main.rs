//! `apl-seg`: train, evaluate, infer, synthesise data and compare pacing modes.

mod commands;
mod run_dir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit status for configuration errors (bad flags, missing inputs, refused overwrites).
const EXIT_CONFIG: u8 = 2;
/// Exit status for runtime aborts (non-finite losses, nothing processed).
const EXIT_ABORT: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "apl-seg", version, about = "Semi-supervised salient object segmentation with adversarial pacing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a predictor and pace generator; writes a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on an annotated dataset.
    Eval(EvalArgs),
    /// Write saliency maps (and optionally reliability maps) for a folder of images.
    Infer(InferArgs),
    /// Generate the synthetic shape dataset on disk.
    Synth(SynthArgs),
    /// Train several modes on the same split and tabulate the results.
    Compare(CompareArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Dataset root with images/ and masks/ subdirectories.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Use the built-in synthetic shape dataset.
    #[arg(long)]
    synthetic: bool,
    /// Number of synthetic training images.
    #[arg(long, default_value_t = 500)]
    synthetic_count: usize,
    /// Pixel noise of the synthetic images.
    #[arg(long, default_value_t = commands::DEFAULT_NOISE)]
    noise: f64,
    /// Square working resolution (defaults to the config's, or the checkpoint's for eval/infer).
    #[arg(long)]
    resolution: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct SplitArgs {
    /// Number of annotated training images.
    #[arg(long, conflicts_with = "labeled_ratio")]
    labeled: Option<usize>,
    /// Fraction of annotated training images.
    #[arg(long)]
    labeled_ratio: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct TrainOverrides {
    /// TOML file with training settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Total iterations including warmup.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Batch size used for both the labeled and unlabeled streams.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    log_every: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Held-out annotated dataset for evaluation (real-data runs).
    #[arg(long)]
    eval_data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    overrides: TrainOverrides,
    /// Reliability source: apl, spl:<kind>, pixelgan or none.
    #[arg(long, conflicts_with = "mode")]
    pace: Option<String>,
    /// Ablation mode: full, only_labeled, no_pace_loss, pixel_gan, no_vstar or spl:<kind>.
    #[arg(long)]
    mode: Option<String>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Replace an existing run directory.
    #[arg(long)]
    force: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Table,
    Json,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint directory (ckpt_<iteration>) or predictor checkpoint file.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Seed of the synthetic held-out set.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Average per-image F curves instead of dataset-level precision and recall.
    #[arg(long)]
    per_image: bool,
    /// Use the fixed i/255 threshold grid instead of rank-spaced thresholds.
    #[arg(long)]
    fixed_thresholds: bool,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Folder of png/jpg images.
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the reliability map of each prediction.
    #[arg(long)]
    dump_weights: bool,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    count: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = commands::DEFAULT_NOISE)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    overrides: TrainOverrides,
    /// Comma-separated modes, e.g. full,no_pace_loss,only_labeled,spl:hard_l1.
    #[arg(long, value_delimiter = ',', required = true)]
    modes: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = commands::check_device().and_then(|_| match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Infer(a) => commands::infer(a),
        Command::Synth(a) => commands::synth(a),
        Command::Compare(a) => commands::compare(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if commands::is_abort(&e) {
                ExitCode::from(EXIT_ABORT)
            } else {
                ExitCode::from(EXIT_CONFIG)
            }
        }
    }
}
