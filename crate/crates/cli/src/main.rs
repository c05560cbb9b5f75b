mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "hybridcnn", version, about = "Hybrid three-branch CNN: training, evaluation, feature export and diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Prepare a dataset, train, and evaluate on the held-out split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled folder.
    Eval(EvalArgs),
    /// Export 128-d penultimate features as CSV.
    Extract(ExtractArgs),
    /// Fit and evaluate a classical classifier on exported features.
    FitMl(FitMlArgs),
    /// Finite-difference gradient verification.
    Gradcheck(GradcheckArgs),
    /// Class activation heatmap overlay for one image.
    Gradcam(GradcamArgs),
    /// Parameter and FLOP counts of every ablation row against the published totals.
    Count(CountArgs),
    /// Dataset census CSV of the prepared train/validation/test splits.
    Manifest(ManifestArgs),
}

/// Labeled images: a `{normal,abnormal}` folder or a generated colour set.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct DataSource {
    /// Root holding `normal/` and `abnormal/` image folders.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Use the built-in colour-separable synthetic set with this many images per class.
    #[arg(long)]
    pub synthetic: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PrepareFlags {
    /// Grow each class of the training side to this many items.
    #[arg(long)]
    pub augment_target: Option<usize>,
    /// Keep this many normal images before splitting.
    #[arg(long)]
    pub subsample_normal: Option<usize>,
    /// Share of the training side held out for validation (0 disables).
    #[arg(long)]
    pub validation_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataSource,
    /// JSON run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "model.ckpt")]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_attention: bool,
    #[arg(long)]
    pub no_cnc: bool,
    #[arg(long)]
    pub no_dsc: bool,
    #[arg(long)]
    pub no_mfe: bool,
    #[command(flatten)]
    pub prepare: PrepareFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataSource,
    #[arg(long, default_value = "out.json")]
    pub report: PathBuf,
    /// Also write ROC vertices (threshold,fpr,tpr) here.
    #[arg(long)]
    pub roc: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Seed of the synthetic set, when one is used.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataSource,
    #[arg(long, default_value = "features.csv")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Seed of the synthetic set, when one is used.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Rf,
    Knn,
    Hinge,
}

#[derive(Debug, Args)]
pub struct FitMlArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum, default_value_t = Algo::Rf)]
    pub algo: Algo,
    /// Cross-validation folds; 0 or 1 fits on all of --features and tests on --test-features.
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub test_features: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Where to save the fitted classifier (holdout mode).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "ml_report.json")]
    pub report: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scope {
    Op,
    Model,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = Scope::Op)]
    pub scope: Scope,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Coordinates perturbed per tensor in model scope.
    #[arg(long, default_value_t = 6)]
    pub samples: usize,
    /// Write the full reports as JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CamBranch {
    All,
    Cnc,
    Dsc,
    Mfe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CamTarget {
    Predicted,
    Normal,
    Abnormal,
}

#[derive(Debug, Args)]
pub struct GradcamArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value = "overlay.png")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = CamBranch::All)]
    pub branch: CamBranch,
    #[arg(long, value_enum, default_value_t = CamTarget::Predicted)]
    pub target: CamTarget,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input_size: Option<usize>,
    /// Print JSON instead of the table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ManifestArgs {
    #[command(flatten)]
    pub data: DataSource,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "manifest.csv")]
    pub out: PathBuf,
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub prepare: PrepareFlags,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", Failure::usage(first).to_json_line());
            return ExitCode::from(failure::EXIT_USAGE as u8);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json_line());
            ExitCode::from(f.code as u8)
        }
    }
}
