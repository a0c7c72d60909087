use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "crossglg", version, about = "Text-guided one-shot skeleton action recognition")]
pub struct Cli {
    /// Seed for data generation, initialization, shuffling and episode sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Root for relative paths.
    #[arg(long, global = true, env = "CROSSGLG_DATA_DIR")]
    pub data_dir: Option<PathBuf>,

    /// Built-in topology name or a topology JSON file.
    #[arg(long, global = true)]
    pub topology: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset with known informative joints, and matching descriptions.
    GenData(GenDataArgs),
    /// Extract key joints from global action descriptions.
    Extract(ExtractArgs),
    /// Embed per-joint descriptions into external embedding files.
    EmbedText(EmbedTextArgs),
    /// Train on base classes and write a frozen checkpoint with its loss log.
    Train(TrainArgs),
    /// One-shot evaluation of a checkpoint on the classes it was not trained on.
    Eval(EvalArgs),
    /// Train and evaluate across joint-importance split points.
    SweepJid(SweepArgs),
    /// Export spatial attention and joint importance per sample.
    Viz(VizArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory for dataset.jsonl, descriptions.jsonl and key_joint_truth.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Also write the binary companion dataset.bin.
    #[arg(long)]
    pub binary: bool,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub descriptions: Option<PathBuf>,
    /// Output file, one key-joint record per line.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedTextArgs {
    #[arg(long)]
    pub descriptions: Option<PathBuf>,
    /// Output directory; one manifest and blob per action.
    #[arg(long)]
    pub out: PathBuf,
    /// Embedding width; defaults to the model's text width.
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct ModelOverrides {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub pre_blocks: Option<usize>,
    #[arg(long)]
    pub alpha1: Option<f64>,
    #[arg(long)]
    pub alpha2: Option<f64>,
    /// Joint-importance calibration (`false` zeroes its loss weight).
    #[arg(long, action = ArgAction::Set)]
    pub g2l: Option<bool>,
    /// Text-guided branch (`false` zeroes its loss weight).
    #[arg(long, action = ArgAction::Set)]
    pub l2g: Option<bool>,
    #[arg(long, action = ArgAction::Set)]
    pub static_text: Option<bool>,
    #[arg(long, action = ArgAction::Set)]
    pub reweight_residual: Option<bool>,
}

#[derive(Debug, Args, Default)]
pub struct TrainInputs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub descriptions: Option<PathBuf>,
    /// Directory of external embedding manifests; replaces the built-in embedder.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Comma-separated base labels.
    #[arg(long, value_delimiter = ',')]
    pub base_classes: Option<Vec<usize>>,
    /// Use the first N labels as base classes.
    #[arg(long)]
    pub n_base: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub inputs: TrainInputs,
    #[command(flatten)]
    pub model: ModelOverrides,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Classifier {
    Dc,
    Prototype,
}

#[derive(Debug, Args, Default)]
pub struct EvalOverrides {
    #[arg(long, value_enum)]
    pub classifier: Option<Classifier>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub dc_k: Option<usize>,
    #[arg(long)]
    pub dc_alpha: Option<f64>,
    #[arg(long)]
    pub dc_lambda: Option<f64>,
    #[arg(long)]
    pub dc_samples: Option<usize>,
    /// Diagonal base covariances.
    #[arg(long)]
    pub dc_diagonal: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub eval: EvalOverrides,
    /// Report file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub inputs: TrainInputs,
    #[command(flatten)]
    pub model: ModelOverrides,
    #[command(flatten)]
    pub eval: EvalOverrides,
    /// Split points to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [3, 5, 7, 9])]
    pub pre: Vec<usize>,
    /// Table file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated sample ids; defaults to the first `--limit` samples.
    #[arg(long, value_delimiter = ',')]
    pub samples: Option<Vec<String>>,
    #[arg(long, default_value_t = 4)]
    pub limit: usize,
    #[arg(long)]
    pub out: PathBuf,
}
