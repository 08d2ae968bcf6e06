use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "hiermiml", version, about = "Span technique classification with hierarchical auxiliary heads")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a vocabulary TSV from a corpus.
    BuildVocab(BuildVocabArgs),
    /// Dump windows (or single-span examples) for inspection.
    Preprocess(PreprocessArgs),
    /// Train one model and keep the best evaluation checkpoint.
    Train(TrainArgs),
    /// Label the spans of a corpus with a trained checkpoint.
    Predict(PredictArgs),
    /// Score a prediction file against gold labels.
    Eval(EvalArgs),
    /// Article-level k-fold cross-validation.
    Cv(CvArgs),
    /// Cross-validated grid over λ_training and λ_eval.
    Sweep(SweepArgs),
    /// Train on the true tree and on a leaf-shuffled copy.
    AblateShuffle(AblateArgs),
    /// Write a synthetic corpus.
    Synth(SynthArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::BuildVocab(_) => "build-vocab",
            Command::Preprocess(_) => "preprocess",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Eval(_) => "eval",
            Command::Cv(_) => "cv",
            Command::Sweep(_) => "sweep",
            Command::AblateShuffle(_) => "ablate-shuffle",
            Command::Synth(_) => "synth",
        }
    }
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output directory [default: $HIERMIML_OUTPUT_DIR, else ./hiermiml-out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Directory of article<id>.txt files.
    #[arg(long, value_name = "DIR")]
    pub articles: PathBuf,
    /// Label TSV: article id, technique, start, end.
    #[arg(long, value_name = "FILE")]
    pub labels: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalCorpusArgs {
    /// Held-out articles; without them the training corpus is scored.
    #[arg(long, value_name = "DIR", requires = "eval_labels")]
    pub eval_articles: Option<PathBuf>,
    #[arg(long, value_name = "FILE", requires = "eval_articles")]
    pub eval_labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TreeArgs {
    /// Hierarchy outline; the built-in tree when absent.
    #[arg(long, value_name = "FILE")]
    pub hierarchy: Option<PathBuf>,
    /// Permute the tree's leaves with this seed.
    #[arg(long, value_name = "N")]
    pub shuffle_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct WindowArgs {
    #[arg(long, default_value_t = 512)]
    pub window_size: usize,
    #[arg(long, default_value_t = 256)]
    pub stride: usize,
    /// Context tokens per side for single-instance examples.
    #[arg(long, default_value_t = 256)]
    pub context: usize,
    #[arg(long, default_value_t = 64)]
    pub marker_budget: usize,
    /// Tokens rarer than this map to the unknown id.
    #[arg(long, default_value_t = 1)]
    pub min_frequency: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Miml,
    SingleInstance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum HeadModeArg {
    Flat,
    FlatAux,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Small encoder trained from scratch.
    Desk,
    /// Published rates, batch sizes and dropout for a large encoder.
    Published,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Miml)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = HeadModeArg::FlatAux)]
    pub head_mode: HeadModeArg,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 128)]
    pub ffn_dim: usize,
    #[arg(long, default_value_t = 512)]
    pub max_positions: usize,
}

/// Optimization settings; unset values come from the preset.
#[derive(Debug, Args)]
pub struct OptimArgs {
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub lambda_train: Option<f64>,
    #[arg(long)]
    pub lambda_eval: Option<f64>,
    /// Root of every random stream.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads inside one training run.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Existing vocabulary; built from the training corpus when absent.
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    #[arg(long, value_name = "DIR")]
    pub articles: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub min_frequency: usize,
    #[arg(long, default_value_t = 64)]
    pub marker_budget: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub window: WindowArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Miml)]
    pub mode: ModeArg,
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[command(flatten)]
    pub eval: EvalCorpusArgs,
    #[command(flatten)]
    pub tree: TreeArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Vocabulary the checkpoint was trained with.
    #[arg(long, value_name = "FILE")]
    pub vocab: PathBuf,
    /// Spans to label; their label counts fix how many labels each gets.
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub window: WindowArgs,
    /// Overrides the checkpoint's λ_eval.
    #[arg(long)]
    pub lambda_eval: Option<f64>,
    /// Must match the checkpoint's tree; read from the checkpoint when absent.
    #[arg(long, value_name = "FILE")]
    pub hierarchy: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub gold: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub pred: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub hierarchy: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[command(flatten)]
    pub tree: TreeArgs,
    #[arg(long, default_value_t = 6)]
    pub folds: usize,
    /// Folds trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[command(flatten)]
    pub tree: TreeArgs,
    /// λ_training range start:end:step with λ_eval = λ_training.
    #[arg(long, value_name = "RANGE", conflicts_with = "grid", required_unless_present = "grid")]
    pub diagonal: Option<String>,
    /// λ_training range with λ_eval in {0, 1, λ_training}.
    #[arg(long, value_name = "RANGE")]
    pub grid: Option<String>,
    #[arg(long, default_value_t = 6)]
    pub folds: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[command(flatten)]
    pub eval: EvalCorpusArgs,
    #[arg(long, value_name = "FILE")]
    pub hierarchy: Option<PathBuf>,
    /// Seed of the leaf permutation for the shuffled arm.
    #[arg(long, default_value_t = 1)]
    pub shuffle_seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator settings as `key = value` lines.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Overrides the configured article count.
    #[arg(long)]
    pub num_articles: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "FILE")]
    pub hierarchy: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}
