use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dannseg_core::data::Split;
use dannseg_core::metrics::MwMethod;
use dannseg_core::train::TrainingMode;

use crate::config::Precision;

#[derive(Debug, Parser)]
#[command(
    name = "dannseg",
    version,
    about = "Domain-adversarial cardiac segmentation on synthetic data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a multi-domain dataset.
    Generate(GenerateArgs),
    /// Train a segmenter, adversarially or as the baseline.
    Train(TrainArgs),
    /// Score a checkpoint on a split; optionally compare with a second one.
    Eval(EvalArgs),
    /// Export bottleneck embeddings and fit a domain probe on them.
    Probe(ProbeArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// `default`, a comma-separated subset of the default domain ids, a
    /// JSON file of domain specs, or the JSON itself.
    #[arg(long, default_value = "default")]
    pub domains: String,
    #[arg(long, default_value_t = 100)]
    pub per_domain: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Falls back to DANNSEG_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Target pixel spacing in mm.
    #[arg(long)]
    pub spacing: Option<f64>,
    /// Replace an existing dataset in `--out`.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Adversarial,
    Baseline,
}

impl From<ModeArg> for TrainingMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Adversarial => TrainingMode::Adversarial,
            ModeArg::Baseline => TrainingMode::Baseline,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MwArg {
    Exact,
    Normal,
    Auto,
}

impl From<MwArg> for MwMethod {
    fn from(m: MwArg) -> Self {
        match m {
            MwArg::Exact => MwMethod::Exact,
            MwArg::Normal => MwMethod::Normal,
            MwArg::Auto => MwMethod::Auto,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// JSON run configuration; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    /// Lengths of the three phases, e.g. `20,20,40`.
    #[arg(long, value_delimiter = ',')]
    pub phase_epochs: Option<Vec<usize>>,
    #[arg(long)]
    pub alpha_ramp: Option<usize>,
    /// Epochs between per-epoch checkpoints (0: only the resumable one).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from a resumable checkpoint, by default
    /// `<out>/checkpoints/last.ckpt`.
    #[arg(long, num_args = 0..=1)]
    pub resume: Option<Option<PathBuf>>,
    /// Stop after this many epochs in this invocation.
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Start over in an `--out` that already holds a run.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    #[arg(long)]
    pub out: PathBuf,
    /// Second checkpoint tested against the first per class.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Run configuration whose architecture the checkpoint must match.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mann_whitney: Option<MwArg>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Domains the probe separates, comma-separated; all by default.
    #[arg(long, value_delimiter = ',')]
    pub domains: Option<Vec<String>>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}
