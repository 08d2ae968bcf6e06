//! Optimization loop, cross-validation, λ sweeps, the shuffled-tree
//! ablation and checkpoints.

mod checkpoint;
mod experiments;
mod optim;
mod prepare;
mod run;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusError;
use crate::evaluation::EvalError;
use crate::hierarchy::HierarchyTree;
use crate::model::{Mode, ModelConfig, ModelError};
use crate::par::Execution;
use crate::windowing::WindowError;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_VERSION};
pub use experiments::{
    lambda_sweep, mean_std, run_cross_validation, shuffled_ablation, AblationArm, AblationResult, CvResult, EvalPolicy,
    FoldResult, MetricStats, SweepGrid, SweepRow, SweepTable,
};
pub use optim::{optimizer_step, OptimizerState, BETA1, BETA2, EPSILON};
pub use prepare::{predict, prepare, PrepConfig, Prepared, SpanRef};
pub use run::{train, HistoryRow, RunHistory, TrainOutcome};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged { epoch: usize, step: usize, detail: String },
    #[error("fold {fold}: {source}")]
    Fold { fold: usize, source: Box<TrainError> },
}

impl TrainError {
    /// True for divergence and other non-finite numerical failures.
    pub fn is_numerical(&self) -> bool {
        match self {
            TrainError::Diverged { .. } => true,
            TrainError::Model(e) => matches!(e, ModelError::NonFinite(_) | ModelError::ZeroProbability),
            TrainError::Fold { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Decoupled weight-decay coefficient.
    pub weight_decay: f64,
    pub dropout: f64,
    /// Windows per step (MIML) or spans per step (single-instance).
    pub batch_size: usize,
    pub epochs: usize,
    /// Optimizer steps between evaluations.
    pub eval_every: usize,
    pub seed: u64,
    pub lambda_train: f64,
    pub lambda_eval: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk(Mode::Miml)
    }
}

impl TrainConfig {
    /// Settings that train the small from-scratch encoder in seconds.
    pub fn desk(mode: Mode) -> Self {
        TrainConfig {
            lr: 3e-3,
            weight_decay: 0.01,
            dropout: match mode {
                Mode::Miml => 0.1,
                Mode::SingleInstance => 0.0,
            },
            batch_size: 8,
            epochs: 20,
            eval_every: 25,
            seed: 0,
            lambda_train: 0.5,
            lambda_eval: 0.5,
        }
    }

    /// Hyperparameters published for a large pretrained encoder.
    pub fn published(mode: Mode) -> Self {
        let (lr, weight_decay, dropout, batch_size) = match mode {
            Mode::SingleInstance => (2e-5, 0.01, 0.0, 16),
            Mode::Miml => (1e-5, 0.1, 0.1, 8),
        };
        TrainConfig { lr, weight_decay, dropout, batch_size, ..TrainConfig::desk(mode) }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be finite and non-negative", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay {} must be finite and non-negative", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 {
            return bad("batch size, epochs and eval interval must be positive".into());
        }
        for l in [self.lambda_train, self.lambda_eval] {
            if !(0.0..=1.0).contains(&l) {
                return Err(ModelError::InvalidLambda(l).into());
            }
        }
        Ok(())
    }

    /// Copies the run-level λ values and dropout into a model config.
    pub fn apply_to(&self, cfg: &mut ModelConfig) {
        cfg.lambda_train = self.lambda_train;
        cfg.lambda_eval = self.lambda_eval;
        cfg.dropout = self.dropout;
    }
}

/// Everything that defines a run apart from the data.
#[derive(Clone, Debug)]
pub struct Experiment {
    /// Tree the auxiliary heads are trained on.
    pub tree: HierarchyTree,
    /// Tree used for Tree-F1 (the true tree, even when `tree` is shuffled).
    pub metric_tree: HierarchyTree,
    /// Architecture; `vocab_size` is overwritten by the tokenizer's size.
    pub model: ModelConfig,
    pub prep: PrepConfig,
    pub train: TrainConfig,
    pub execution: Execution,
}

impl Experiment {
    /// Desk-scale defaults for `tree` in the given mode.
    pub fn desk(tree: HierarchyTree, mode: Mode) -> Self {
        let mut model = ModelConfig::desk(&tree, 1);
        model.mode = mode;
        let train = TrainConfig::desk(mode);
        train.apply_to(&mut model);
        Experiment {
            metric_tree: tree.clone(),
            tree,
            model,
            prep: PrepConfig::default(),
            train,
            execution: Execution::default(),
        }
    }

    /// Same experiment with different λ values.
    pub fn with_lambdas(&self, lambda_train: f64, lambda_eval: f64) -> Self {
        let mut e = self.clone();
        e.train.lambda_train = lambda_train;
        e.train.lambda_eval = lambda_eval;
        e
    }
}
