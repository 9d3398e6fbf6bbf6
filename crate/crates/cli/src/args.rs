//! Command-line definitions. Unknown flags are rejected by clap; every run
//! writes its fully resolved configuration next to its outputs.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use promptcl::contrastive::DenominatorMode;
use promptcl::sampling::{PromptScope, SamplingStrategy};

#[derive(Parser, Debug)]
#[command(
    name = "promptcl",
    version,
    about = "K-shot prompt fine-tuning with prompt-level and batch-level contrastive learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write deterministic K-shot split manifests for a set of seeds.
    Split(SplitArgs),
    /// Train across seeds and the lr x bs grid; report mean/std/median test accuracy.
    Train(TrainArgs),
    /// Re-evaluate the chosen model of a finished training run on its test set.
    Eval(EvalArgs),
    /// Sweep the contrastive loss ratios (t = a) over a list of values.
    SweepRatio(SweepRatioArgs),
    /// Sweep K for both sampling strategies.
    SweepKshot(SweepKshotArgs),
    /// Rebuild tables and summaries from run artifacts on disk.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Task name. Names ending in "nli" (and "rte") are sentence-pair tasks;
    /// everything else is single-sentence.
    #[arg(long)]
    pub task: String,
    /// Directory containing train.tsv and test.tsv.
    #[arg(long)]
    pub data_dir: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Template file: one `<id><TAB><pattern>` per line, first line is the
    /// main template.
    #[arg(long)]
    pub templates: PathBuf,
    /// Verbalizer file: one `<label><TAB><word>` per line.
    #[arg(long)]
    pub verbalizer: PathBuf,
    /// Backend name. "reference" is built in; external adapters register here.
    #[arg(long, default_value = "reference")]
    pub backend: String,
    /// Hidden dimension of the reference backend.
    #[arg(long, default_value_t = 16)]
    pub hidden_dim: usize,
    /// Initialization seed of the reference backend (combined with the run
    /// seed).
    #[arg(long, default_value_t = 7)]
    pub backend_seed: u64,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum StrategyArg {
    Sim,
    Label,
}

impl From<StrategyArg> for SamplingStrategy {
    fn from(v: StrategyArg) -> Self {
        match v {
            StrategyArg::Sim => SamplingStrategy::SimBased,
            StrategyArg::Label => SamplingStrategy::LabelBased,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum PromptScopeArg {
    Batch,
    QueryOnly,
}

impl From<PromptScopeArg> for PromptScope {
    fn from(v: PromptScopeArg) -> Self {
        match v {
            PromptScopeArg::Batch => PromptScope::Batch,
            PromptScopeArg::QueryOnly => PromptScope::QueryOnly,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum DenominatorArg {
    WithPositive,
    NegativesOnly,
}

impl From<DenominatorArg> for DenominatorMode {
    fn from(v: DenominatorArg) -> Self {
        match v {
            DenominatorArg::WithPositive => DenominatorMode::WithPositive,
            DenominatorArg::NegativesOnly => DenominatorMode::NegativesOnly,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SplitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [13u64, 21, 42, 87, 100])]
    pub seeds: Vec<u64>,
    /// Output directory (default: $PROMPTCL_OUT_DIR or ./runs, under
    /// <task>/split).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Training (and dev) examples per label.
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    /// Sub-dataset seeds, one experiment per seed.
    #[arg(long, value_delimiter = ',', default_values_t = [13u64, 21, 42, 87, 100])]
    pub seeds: Vec<u64>,
    /// Positive/negative selection strategy.
    #[arg(long, value_enum, default_value_t = StrategyArg::Sim)]
    pub strategy: StrategyArg,
    /// Fraction of the ranked support set retained before selection.
    #[arg(long, default_value_t = 0.5)]
    pub filtering_ratio: f64,
    /// InfoNCE temperature.
    #[arg(long, default_value_t = 0.07)]
    pub temperature: f64,
    /// Weight of the batch-level contrastive loss.
    #[arg(long, default_value_t = 0.5)]
    pub t: f64,
    /// Weight of the prompt-level contrastive loss.
    #[arg(long, default_value_t = 0.5)]
    pub a: f64,
    /// Learning-rate grid (comma separated).
    #[arg(long, value_delimiter = ',', default_values_t = [0.5])]
    pub lr: Vec<f64>,
    /// Batch-size grid (comma separated).
    #[arg(long, value_delimiter = ',', default_values_t = [8usize])]
    pub bs: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 100)]
    pub eval_every: usize,
    /// Cap on negatives per anchor (default: all different-label survivors).
    #[arg(long)]
    pub max_negatives: Option<usize>,
    /// Whether prompt-level support re-renders the whole batch or only the
    /// query.
    #[arg(long, value_enum, default_value_t = PromptScopeArg::Batch)]
    pub prompt_scope: PromptScopeArg,
    /// InfoNCE denominator composition.
    #[arg(long, value_enum, default_value_t = DenominatorArg::WithPositive)]
    pub denominator: DenominatorArg,
    /// Force the positive to share the query's label (default: strategy
    /// dependent).
    #[arg(long)]
    pub require_same_label_positive: Option<bool>,
    /// Output directory (default: $PROMPTCL_OUT_DIR or ./runs, under
    /// <task>/train).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Worker-thread cap for parallel work (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    /// A directory previously produced by `train` (or one sweep run inside a
    /// sweep directory).
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Which seed's chosen model to evaluate (default: first seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct SweepRatioArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Values taken by both loss ratios (t = a).
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.5, 1.0, 20.0])]
    pub values: Vec<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct SweepKshotArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// K values to sweep; both strategies run at every K.
    #[arg(long, value_delimiter = ',', default_values_t = [8usize, 16, 32])]
    pub k_values: Vec<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    /// A directory produced by train, sweep-ratio, or sweep-kshot.
    #[arg(long)]
    pub out_dir: PathBuf,
}
