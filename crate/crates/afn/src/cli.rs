//! Command-line flags.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "afn",
    version,
    about = "Logarithmic-neuron factorization models and baselines for click prediction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model class and write its best checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint or ensemble on a labelled file.
    Evaluate(EvaluateArgs),
    /// Blend two trained checkpoints.
    Ensemble(EnsembleArgs),
    /// Export cross-feature orders from AFN checkpoints.
    InspectOrders(InspectArgs),
    /// Compare analytic and numeric gradients on a tiny random problem.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset.
    GenSynth(GenSynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Lr,
    Fm,
    Hofm,
    Dnn,
    Afn,
    #[value(name = "afn+")]
    AfnPlus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    pub fn is_on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormSite {
    AfterLog,
    AfterWeightedSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Pattern {
    Cross3,
}

/// Architecture flags shared by `train` and `gradcheck`.
#[derive(Debug, Clone, Args)]
pub struct ArchArgs {
    /// Embedding size k.
    #[arg(long, default_value_t = 10)]
    pub embed_dim: usize,
    /// Logarithmic neurons N.
    #[arg(long, default_value_t = 32)]
    pub log_neurons: usize,
    /// Hidden widths, comma separated; empty or `none` for no hidden layer.
    #[arg(long, default_value = "32,32")]
    pub hidden: String,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub bn: Switch,
    /// Where the batch norm after the logarithm sits.
    #[arg(long, value_enum, default_value_t = NormSite::AfterLog)]
    pub log_norm_site: NormSite,
    /// Highest interaction order for HOFM.
    #[arg(long, default_value_t = 3)]
    pub max_order: usize,
    /// Lower bound applied to embedding magnitudes before the logarithm.
    #[arg(long, default_value_t = 1e-7)]
    pub clamp_eps: f64,
    /// Multiplier on the default initialization ranges.
    #[arg(long, default_value_t = 1.0)]
    pub init_scale: f64,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelChoice,
    /// Training file; its vocabulary defines the schema.
    #[arg(long)]
    pub data: PathBuf,
    /// Validation file used for early stopping.
    #[arg(long)]
    pub val: PathBuf,
    /// Checkpoint path. For `afn+` this is the ensemble file and the parts
    /// go next to it as `<stem>.afn.json` and `<stem>.dnn.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 4096)]
    pub batch: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-epoch log; defaults to `<out stem>.metrics.csv`.
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
    /// Write an AFN snapshot every this many optimizer steps (0 disables).
    #[arg(long, default_value_t = 0)]
    pub snapshot_every: u64,
    /// Snapshot directory; defaults to `<out stem>.snapshots`.
    #[arg(long)]
    pub snapshot_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    pub blend_lr: f64,
    #[arg(long, default_value_t = 4000)]
    pub blend_iterations: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Model or ensemble checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Appends one `checkpoint,data,auc,logloss` row.
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EnsembleArgs {
    #[arg(long)]
    pub afn: PathBuf,
    #[arg(long)]
    pub dnn: PathBuf,
    /// Labelled file the blend weights are fitted on.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub blend_lr: f64,
    #[arg(long, default_value_t = 4000)]
    pub blend_iterations: usize,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    /// Glob matching AFN checkpoints or snapshots.
    #[arg(long)]
    pub ckpt_glob: String,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Fields kept per neuron in the case study.
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
    /// Checkpoint for the case study; defaults to the latest snapshot.
    #[arg(long)]
    pub case_ckpt: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum)]
    pub model: ModelChoice,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub fields: usize,
    #[arg(long, default_value_t = 3)]
    pub cardinality: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 2)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub log_neurons: usize,
    #[arg(long, default_value = "2")]
    pub hidden: String,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub bn: Switch,
    #[arg(long, default_value_t = 3)]
    pub max_order: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = crate::commands::GRADCHECK_TOLERANCE)]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Args)]
pub struct GenSynthArgs {
    #[arg(long, value_enum, default_value_t = Pattern::Cross3)]
    pub pattern: Pattern,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50_000)]
    pub rows: usize,
    #[arg(long)]
    pub val_out: Option<PathBuf>,
    #[arg(long, default_value_t = 5_000)]
    pub val_rows: usize,
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    #[arg(long, default_value_t = 5_000)]
    pub test_rows: usize,
    #[arg(long, default_value_t = 8)]
    pub fields: usize,
    #[arg(long, default_value_t = 10)]
    pub cardinality: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `32,32`; empty or `none` means no hidden layer.
pub fn parse_hidden(text: &str) -> Result<Vec<usize>, String> {
    let t = text.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    t.split(',')
        .map(|w| match w.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(format!("invalid hidden width `{}`", w.trim())),
        })
        .collect()
}
