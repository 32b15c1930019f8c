//! Hyperparameter sweep coordinator and the gated model repository.
//!
//! Agents request configurations for an open round, train, and report a
//! cross-validation loss with the resulting checkpoint. A report replaces
//! the repository's best model for its target only when the loss is strictly
//! lower. Every state change is journaled durably before it is acknowledged.

mod coordinator;
mod message;
mod space;

pub use coordinator::{
    BestModel, ConfigStatus, Coordinator, CoordinatorOptions, EvalHook, HistoryEntry, IssuedConfig, ReportOutcome,
    RoundSpec, RoundStatus, Setup, SweepOverview, SweepRound, Target, DEFAULT_CONFIGS_PER_ROUND,
};
pub use message::{handle_message, handle_value, MessageType, SweepMessage};
pub use space::{IntRange, LogRange, SearchSpace};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SweepError {
    #[error("unknown round `{0}`")]
    UnknownRound(String),
    #[error("target {target} already has open round {round_id}")]
    RoundOpen { target: String, round_id: String },
    #[error("round `{0}` is closed")]
    RoundClosed(String),
    #[error("unknown config `{0}`")]
    UnknownConfig(String),
    #[error("config `{0}` was already reported")]
    DuplicateReport(String),
    #[error("config `{0}` expired before it was reported")]
    ConfigExpired(String),
    #[error("checkpoint does not match config `{0}`")]
    ConfigMismatch(String),
    #[error("no model for target {0}")]
    NoModel(String),
    #[error("unknown checkpoint `{0}`")]
    UnknownCheckpoint(String),
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("storage: {0}")]
    Io(String),
    /// Error relayed from a remote coordinator, identified by its wire code.
    #[error("{message}")]
    Remote { code: String, message: String },
}

impl SweepError {
    pub fn code(&self) -> &str {
        match self {
            SweepError::UnknownRound(_) => "unknown_round",
            SweepError::RoundOpen { .. } => "round_open",
            SweepError::RoundClosed(_) => "round_closed",
            SweepError::UnknownConfig(_) => "unknown_config",
            SweepError::DuplicateReport(_) => "duplicate_report",
            SweepError::ConfigExpired(_) => "config_expired",
            SweepError::ConfigMismatch(_) => "config_mismatch",
            SweepError::NoModel(_) => "no_model",
            SweepError::UnknownCheckpoint(_) => "unknown_checkpoint",
            SweepError::InvalidSpace(_) => "invalid_space",
            SweepError::InvalidRequest(_) => "invalid_request",
            SweepError::Checkpoint(_) => "checkpoint",
            SweepError::Io(_) => "io",
            SweepError::Remote { code, .. } => code,
        }
    }
}

impl From<std::io::Error> for SweepError {
    fn from(e: std::io::Error) -> Self {
        SweepError::Io(e.to_string())
    }
}
