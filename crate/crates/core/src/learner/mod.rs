//! Recurrent inverse-dynamics model: training with backpropagation through
//! time, k-fold cross-validation, fine-tuning by layer freezing and
//! evaluation against torque bounds.

mod checkpoint;
mod hyper;
pub mod network;
mod normalize;
mod train;

pub use checkpoint::{ModelCheckpoint, Provenance, CHECKPOINT_FORMAT_VERSION};
pub use hyper::{HyperParams, HIDDEN_SIZES, MAX_RECURRENT_LAYERS, MAX_UNFROZEN_LAYERS};
pub use network::Network;
pub use normalize::Normalization;
pub use train::{
    data_hash, evaluate, evaluate_with, finetune, init_model, layer_groups, train, EvalReport, FoldResult,
    LabeledSequence, TrainOutcome, DEFAULT_FOLDS, DEFAULT_SENSOR_FLOOR,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("every sequence is shorter than the {window}-step training window")]
    AllSequencesTooShort { window: usize },
    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("fine-tuning needs at least one unfrozen layer group")]
    NothingToAdapt,
    #[error("{requested} layer groups requested, model has {available}")]
    TooManyGroups { requested: usize, available: usize },
    #[error("incompatible parent: {0}")]
    IncompatibleParent(String),
    #[error("sequence {0} is not evaluation data")]
    NotEvaluationData(String),
    #[error("{folds} folds need at least 2 folds and as many sequences ({sequences} given)")]
    InvalidFolds { folds: usize, sequences: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
}
