//! Encoder, flat and auxiliary heads, losses and exact gradients.

mod encoder;
mod heads;
mod instance;
mod params;

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::HierarchyTree;

pub use encoder::{EncoderCache, EncoderOptions};
pub use heads::{
    aux_leaf_distribution, aux_loss, aux_node_distribution, combined_distribution, flat_distribution, flat_loss,
    log_softmax, overall_loss, predict_labels, sigmoid, single_instance_bce_loss, softmax, Strictness,
};
pub use instance::{BatchOutput, Instance, SpanForward, SpanTarget};
pub use params::{Gradients, LayerParams, Parameters};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("sequence of {len} tokens exceeds the {max} available positions")]
    SequenceTooLong { len: usize, max: usize },
    #[error("position {0} is outside the sequence")]
    PositionOutOfRange(usize),
    #[error("node {0} is not an internal classifier")]
    NotAClassifier(usize),
    #[error("lambda {0} outside [0, 1]")]
    InvalidLambda(f64),
    #[error("gold event has zero probability")]
    ZeroProbability,
    #[error("requested {0} labels; must be between 1 and 14")]
    LabelCount(usize),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("model config mismatch: {0}")]
    ConfigMismatch(String),
}

/// One encoder pass per span (baseline) or per window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SingleInstance,
    Miml,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadMode {
    Flat,
    FlatAux,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    /// C_k of every internal node, in classifier order.
    pub classifier_arities: Vec<usize>,
    pub lambda_train: f64,
    pub lambda_eval: f64,
    pub mode: Mode,
    pub head_mode: HeadMode,
    pub dropout: f64,
}

impl ModelConfig {
    /// Desk-scale defaults: d=64, one pre-LN layer with two heads.
    pub fn desk(tree: &HierarchyTree, vocab_size: usize) -> Self {
        ModelConfig {
            dim: 64,
            layers: 1,
            heads: 2,
            ffn_dim: 128,
            vocab_size,
            max_positions: 512,
            classifier_arities: tree.classifier_arities(),
            lambda_train: 0.5,
            lambda_eval: 0.5,
            mode: Mode::Miml,
            head_mode: HeadMode::FlatAux,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::ConfigMismatch(m));
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!("dim {} must be a positive multiple of heads {}", self.dim, self.heads));
        }
        if self.vocab_size == 0 || self.max_positions == 0 {
            return bad("empty vocabulary or position table".into());
        }
        if self.classifier_arities.iter().any(|&c| c < 2) {
            return bad("every classifier needs at least two edges".into());
        }
        for l in [self.lambda_train, self.lambda_eval] {
            if !(0.0..=1.0).contains(&l) {
                return Err(ModelError::InvalidLambda(l));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn check_tree(&self, tree: &HierarchyTree) -> Result<(), ModelError> {
        if self.classifier_arities != tree.classifier_arities() {
            return Err(ModelError::ConfigMismatch("classifier arities differ from the hierarchy".into()));
        }
        Ok(())
    }

    /// λ_training actually applied; flat-only heads ignore the aux loss.
    pub fn effective_lambda_train(&self) -> f64 {
        match self.head_mode {
            HeadMode::Flat => 0.0,
            HeadMode::FlatAux => self.lambda_train,
        }
    }

    pub fn effective_lambda_eval(&self) -> f64 {
        match self.head_mode {
            HeadMode::Flat => 0.0,
            HeadMode::FlatAux => self.lambda_eval,
        }
    }
}

/// Parameters plus config, counting encoder invocations.
#[derive(Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Parameters,
    encode_calls: AtomicUsize,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model::new(self.config.clone(), self.params.clone())
    }
}

impl Model {
    pub fn new(config: ModelConfig, params: Parameters) -> Self {
        Model { config, params, encode_calls: AtomicUsize::new(0) }
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let params = Parameters::init(&config, seed);
        Ok(Model::new(config, params))
    }

    pub fn encode_calls(&self) -> usize {
        self.encode_calls.load(Ordering::Relaxed)
    }

    pub fn reset_encode_calls(&self) {
        self.encode_calls.store(0, Ordering::Relaxed);
    }

    fn count_encode(&self) {
        self.encode_calls.fetch_add(1, Ordering::Relaxed);
    }
}
