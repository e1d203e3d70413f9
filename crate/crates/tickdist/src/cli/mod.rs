//! The `tickdist` command-line interface.
//!
//! One binary, seven subcommands: `synth-data`, `train`, `distill`,
//! `evaluate`, `predict`, `gradcheck`, `selfcheck`. Paper-protocol
//! hyperparameters are the flag defaults, so the faithful run needs no
//! flags beyond the inputs. Exit codes: 0 success, 2 config/usage, 3 data,
//! 4 numeric failure, 1 otherwise.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Result;
use crate::model::Profile;

#[derive(Parser)]
#[command(
    name = "tickdist",
    version,
    about = "Teacher-student knowledge transfer for binary tick-image classification"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-class dataset: manifest plus PNG images.
    SynthData(SynthDataArgs),
    /// Train a classifier from scratch or with attention transfer.
    Train(TrainArgs),
    /// Run the two-student AT + LSR pipeline.
    Distill(DistillArgs),
    /// Evaluate a model file against a manifest.
    Evaluate(EvaluateArgs),
    /// Classify a single image.
    Predict(PredictArgs),
    /// Finite-difference checks over every operator (64-bit mode).
    Gradcheck(GradcheckArgs),
    /// Structural self-checks: parameter counts, shape table, loss oracles.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args)]
struct OutDirArg {
    /// Output directory for run artifacts.
    #[arg(long, env = "TICKDIST_OUT", default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthDataArgs {
    /// Number of samples to generate.
    #[arg(long)]
    n: usize,
    /// Fraction of positive (blacklegged) samples.
    #[arg(long, default_value_t = 0.41)]
    positive_fraction: f64,
    /// Square image size in pixels.
    #[arg(long, default_value_t = 96)]
    image_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutDirArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Strategy {
    /// Random initialization, binary cross-entropy on hard labels.
    Scratch,
    /// Cross-entropy plus the attention-transfer term against a teacher.
    At,
}

/// Hyperparameter flags shared by `train` and `distill`. Unset flags fall
/// back to the config file (if given), then to the paper defaults.
#[derive(Args)]
struct HyperArgs {
    /// TOML config file; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Initial learning rate (default 1e-3).
    #[arg(long)]
    lr: Option<f64>,
    /// Mini-batch size (default 64).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Epoch budget (default 256).
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cross-entropy weight 1/beta1 in the combined loss (default 1).
    #[arg(long)]
    beta1: Option<f64>,
    /// Attention-loss weight 1/beta2 (default 2).
    #[arg(long)]
    beta2: Option<f64>,
    /// Softening temperature T (default 5).
    #[arg(long)]
    temperature: Option<f64>,
    /// Dropout rate during training (default 0.25).
    #[arg(long)]
    dropout: Option<f64>,
    /// Early-stopping patience in epochs (default 20).
    #[arg(long)]
    patience: Option<usize>,
    /// Disable early stopping and train the full epoch budget.
    #[arg(long, conflicts_with = "patience")]
    paper_faithful: bool,
    /// Disable training-time augmentation.
    #[arg(long)]
    no_augment: bool,
    /// Architecture profile.
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    /// Data-loading pool width.
    #[arg(long)]
    workers: Option<usize>,
    /// Single-worker mode with zeroed wall-clock columns; byte-identical
    /// artifacts for identical flags and seed.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProfileArg {
    Full,
    Reduced,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Full => Profile::Full,
            ProfileArg::Reduced => Profile::Reduced,
        }
    }
}

#[derive(Args)]
struct TeacherArgs {
    /// Teacher model file (LCNN).
    #[arg(long, conflicts_with = "teacher_maps")]
    teacher: Option<PathBuf>,
    /// Precomputed teacher attention maps (ATMP file).
    #[arg(long)]
    teacher_maps: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Arch {
    /// The lighter CNN.
    Student,
    /// The channel-doubled surrogate teacher.
    SurrogateTeacher,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest CSV.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = Strategy::Scratch)]
    strategy: Strategy,
    /// Which network to instantiate and train.
    #[arg(long, value_enum, default_value_t = Arch::Student)]
    arch: Arch,
    #[command(flatten)]
    teacher: TeacherArgs,
    /// Train-side share of the train/test split.
    #[arg(long, default_value_t = 11)]
    split_train: u32,
    /// Test-side share of the train/test split.
    #[arg(long, default_value_t = 1)]
    split_test: u32,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    out: OutDirArg,
}

#[derive(Args)]
struct DistillArgs {
    /// Dataset manifest CSV.
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    teacher: TeacherArgs,
    /// Fraction of the training set used for student one.
    #[arg(long)]
    subset_fraction: Option<f64>,
    #[arg(long, default_value_t = 11)]
    split_train: u32,
    #[arg(long, default_value_t = 1)]
    split_test: u32,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    out: OutDirArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitFilter {
    /// Rows tagged `test` (default when tags are present).
    Test,
    /// Rows tagged `train`.
    Train,
    /// Every row.
    All,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Model file (LCNN).
    #[arg(long)]
    model: PathBuf,
    /// Dataset manifest CSV (optionally split-tagged).
    #[arg(long)]
    manifest: PathBuf,
    /// Which rows to evaluate.
    #[arg(long, value_enum)]
    split: Option<SplitFilter>,
    /// Also report fold-wise mean and standard deviation over k folds.
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, default_value_t = crate::metrics::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[command(flatten)]
    out: OutDirArg,
}

#[derive(Args)]
struct PredictArgs {
    /// Model file (LCNN).
    #[arg(long)]
    model: PathBuf,
    /// PNG or PPM image.
    #[arg(long)]
    image: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Number of random seeds per operator case.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = crate::verify::GRADCHECK_STEP)]
    step: f64,
    /// Maximum allowed relative error.
    #[arg(long, default_value_t = crate::verify::GRADCHECK_TOLERANCE)]
    tolerance: f64,
}

#[derive(Args)]
struct SelfcheckArgs {}

/// Parse `std::env::args` and execute; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData(args) => commands::synth_data(args),
        Command::Train(args) => commands::train(args),
        Command::Distill(args) => commands::distill(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Predict(args) => commands::predict(args),
        Command::Gradcheck(args) => commands::gradcheck(args),
        Command::Selfcheck(args) => commands::selfcheck(args),
    }
}
