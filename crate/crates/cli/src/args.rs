use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tempogs_bench::Layout;

#[derive(Parser, Debug)]
#[command(name = "tempogs", version, about = "Update a Gaussian splatting scene from sparse later views")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Suppress progress messages on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic paired dataset.
    Gen(GenArgs),
    /// Register the later capture to the reference frame.
    Align(AlignArgs),
    /// Build confidence maps for the reference views.
    Confidence(ConfidenceArgs),
    /// Train the updated model.
    Update(UpdateArgs),
    /// Evaluate a model on dataset views.
    Eval(EvalArgs),
    /// Run every stage in order.
    Pipeline(PipelineArgs),
}

/// Training configuration sources.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    /// TOML file whose keys are training configuration fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every stochastic component.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-pixel sums in the confidence-weighted loss with unit SSIM weight.
    #[arg(long)]
    pub literal_loss: bool,
}

/// Scene description overrides.
#[derive(Args, Debug, Clone, Default)]
pub struct SceneArgs {
    /// Scene description (JSON or TOML); the built-in desk scene when absent.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Number of later training views.
    #[arg(long)]
    pub views: Option<usize>,
    /// Later view layout.
    #[arg(long)]
    pub layout: Option<Layout>,
}

#[derive(Args, Debug, Clone)]
pub struct GenArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Training configuration of the reference model.
    #[command(flatten)]
    pub train: TrainArgs,
    /// Cache directory for pretrained reference models.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Dataset directory to create.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct AlignArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Skip the ICP refinement.
    #[arg(long)]
    pub no_icp: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output alignment file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ConfidenceArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Reference model; the dataset's pretrained model when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Alignment file; computed when absent.
    #[arg(long)]
    pub alignment: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Write a grey-scale score image per view.
    #[arg(long)]
    pub dump_heatmaps: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct UpdateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Reference model; the dataset's pretrained model when absent.
    #[arg(long)]
    pub model_t0: Option<PathBuf>,
    #[arg(long)]
    pub alignment: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Output model (PLY).
    #[arg(long)]
    pub out: PathBuf,
    /// Output training report (JSON).
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    /// Held-out later views.
    Test,
    /// Later training views.
    Train,
    /// Reference views.
    T0,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Alignment placing later views in the model frame; ignored for reference views.
    #[arg(long)]
    pub alignment: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    /// Output metrics (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct PipelineArgs {
    /// Existing dataset; generated into the output directory when absent.
    #[arg(long, conflicts_with_all = ["spec", "views", "layout"])]
    pub dataset: Option<PathBuf>,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// TOML training configuration of the reference model.
    #[arg(long)]
    pub pretrain_config: Option<PathBuf>,
    /// Cache directory for pretrained reference models.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub dump_heatmaps: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}
