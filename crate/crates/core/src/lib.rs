//! Multi-instance multi-label classification of propaganda-technique spans
//! with hierarchical auxiliary classifiers.
//!
//! Every span of an article is wrapped in indexed `<bopN>`/`<eopN>` markers,
//! the marked article is cut into overlapping windows, and a small
//! transformer encodes each window once. Each span is classified from the
//! hidden state at its `<bop>` by a flat 14-way softmax and by one softmax
//! per internal node of the annotation decision tree; the two leaf
//! distributions are mixed at training and inference time.

pub mod corpus;
pub mod evaluation;
pub mod hierarchy;
pub mod model;
pub mod par;
pub mod plot;
pub mod seed;
pub mod technique;
pub mod training;
pub mod windowing;

use thiserror::Error;

pub use technique::{Technique, NUM_TECHNIQUES};

/// Any library failure, classified for process exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Hierarchy(#[from] hierarchy::HierarchyError),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Window(#[from] windowing::WindowError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Train(#[from] training::TrainError),
    #[error(transparent)]
    Checkpoint(#[from] training::CheckpointError),
    #[error(transparent)]
    Eval(#[from] evaluation::EvalError),
    #[error(transparent)]
    Plot(#[from] plot::PlotError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad or inconsistent input data or configuration.
    Data,
    /// Non-finite values or divergence.
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        let numerical = match self {
            Error::Model(e) => matches!(e, model::ModelError::NonFinite(_) | model::ModelError::ZeroProbability),
            Error::Train(e) => e.is_numerical(),
            _ => false,
        };
        if numerical {
            ErrorKind::Numerical
        } else {
            ErrorKind::Data
        }
    }
}
