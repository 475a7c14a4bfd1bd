use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};
use ikmr_core::training::OptimizerKind;

#[derive(Debug, Parser)]
#[command(name = "ikmr", version, about = "Skeleton-aware motion retargeting: data generation, training, inference and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired dataset from two skeletons.
    Datagen(DatagenArgs),
    /// Train the dual autoencoder on a paired dataset.
    Pretrain(PretrainArgs),
    /// Fine-tune decoder B on dynamics-feasible targets.
    Finetune(FinetuneArgs),
    /// Retarget a motion file or every motion file in a directory.
    Retarget(RetargetArgs),
    /// Write smoothness, noise, latent and feasibility reports.
    Eval(EvalArgs),
    /// Measure retargeting throughput.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct DatagenArgs {
    /// Skeleton file, or one of the built-in names toy-human, toy-robot, g1-like.
    #[arg(long, default_value = "toy-human")]
    pub skeleton_a: String,
    #[arg(long, default_value = "toy-robot")]
    pub skeleton_b: String,
    /// Number of clip pairs.
    #[arg(long, default_value_t = 256)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub frames: usize,
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
    #[arg(long, env = "IKMR_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Model checkpoint to write; the sidecar goes to `<output>.json`.
    #[arg(long)]
    pub output: PathBuf,
    /// Continue from a saved model and its optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Skeleton for side A; defaults to the built-in skeleton named by the dataset.
    #[arg(long, conflicts_with = "resume")]
    pub skeleton_a: Option<String>,
    #[arg(long, conflicts_with = "resume")]
    pub skeleton_b: Option<String>,
    #[arg(long, default_value_t = 3000)]
    pub steps: usize,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, value_parser = parse_optimizer)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub lambda_align: Option<f64>,
    #[arg(long)]
    pub lambda_consis: Option<f64>,
    #[arg(long, env = "IKMR_SEED")]
    pub seed: Option<u64>,
    /// Threads per mini-batch; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// JSON lines loss log; appended to when resuming.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Also save the model every N steps.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    #[arg(long, default_value_t = 64, conflicts_with = "resume")]
    pub window: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [32, 64], conflicts_with = "resume")]
    pub channels: Vec<usize>,
    #[arg(long, default_value_t = 5, conflicts_with = "resume")]
    pub kernel: usize,
    #[arg(long, default_value_t = 8, conflicts_with = "resume")]
    pub static_channels: usize,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("targets").required(true).args(["feasible", "dataset"])))]
pub struct FinetuneArgs {
    /// Pretrained model checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Dataset whose pairs are (human clip, feasible robot clip).
    #[arg(long)]
    pub feasible: Option<PathBuf>,
    /// Dataset of human clips; targets are the filtered retarget outputs.
    #[arg(long, requires = "limits")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub limits: Option<PathBuf>,
    /// Where to save the generated (human, feasible) pairs.
    #[arg(long, requires = "dataset")]
    pub write_feasible: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, value_parser = parse_optimizer, default_value = "adam")]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_ee: f64,
    #[arg(long, env = "IKMR_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetargetArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Motion file or directory of motion files.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file, or directory when the input is a directory.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Frames shared by consecutive windows of long clips.
    #[arg(long, default_value_t = 8)]
    pub overlap: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model under evaluation, typically the fine-tuned one.
    #[arg(long)]
    pub model: PathBuf,
    /// Baseline model for the smoothness comparison.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Root noise standard deviations in meters, ascending.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.01, 0.02, 0.05, 0.1])]
    pub noise_levels: Vec<f64>,
    #[arg(long)]
    pub limits: Option<PathBuf>,
    /// Output directory for report.json and noise_sweep.csv.
    #[arg(long)]
    pub report: PathBuf,
    /// Number of leading dataset pairs in the latent correlation matrix.
    #[arg(long, default_value_t = 24)]
    pub correlation_pairs: usize,
    #[arg(long, env = "IKMR_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 8, 64])]
    pub batch_sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, env = "IKMR_SEED", default_value_t = 0)]
    pub seed: u64,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    s.parse().map_err(|e: ikmr_core::Error| e.to_string())
}
