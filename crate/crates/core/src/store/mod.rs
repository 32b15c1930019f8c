//! Append-only trajectory repository with metadata queries, statistics,
//! joint histograms and named projected views.

mod engine;
mod histogram;
mod protocol;
mod query;
mod record;
mod stats;
mod view;

pub use engine::ShadowStore;
pub use histogram::{Histogram, RobotTypeInfo};
pub use protocol::{handle_store_request, handle_store_value, StoreRequest, StoreResponse};
pub use query::{DatasetQuery, Range, TimeRange};
pub use record::{
    now_timestamp, parse_timestamp, record_from_value, Purpose, Sample, TrajectoryRecord, TIMESTAMP_FORMAT,
};
pub use stats::{compute_stats, DatasetStats, JointStats, Moments, SiteStats};
pub use view::{project, Field, ProjectedRecord, ProjectedSample, ShadowView};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("record {0} already exists")]
    DuplicateRecord(String),
    #[error("field `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("malformed range: {0}")]
    MalformedRange(String),
    #[error("unknown view `{0}`")]
    UnknownView(String),
    #[error("view `{0}` already exists")]
    DuplicateView(String),
    #[error("projection must name at least one field")]
    EmptyProjection,
    #[error("joint index {joint_index} out of range for {n_joints} joints")]
    JointOutOfRange { joint_index: usize, n_joints: usize },
    #[error("unknown robot type: {0}")]
    UnknownRobotType(String),
    #[error("unknown stats report `{0}`")]
    UnknownReport(String),
    #[error("storage: {0}")]
    Io(String),
    /// Error relayed from a remote store, identified by its wire code.
    #[error("{message}")]
    Remote { code: String, message: String },
}

impl StoreError {
    pub fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        StoreError::Schema { field: field.into(), message: message.into() }
    }

    /// Stable machine-readable identifier used on the wire.
    pub fn code(&self) -> &str {
        match self {
            StoreError::DuplicateRecord(_) => "duplicate_record",
            StoreError::Schema { .. } => "schema",
            StoreError::MalformedRange(_) => "malformed_range",
            StoreError::UnknownView(_) => "unknown_view",
            StoreError::DuplicateView(_) => "duplicate_view",
            StoreError::EmptyProjection => "empty_projection",
            StoreError::JointOutOfRange { .. } => "joint_out_of_range",
            StoreError::UnknownRobotType(_) => "unknown_robot_type",
            StoreError::UnknownReport(_) => "unknown_report",
            StoreError::Io(_) => "io",
            StoreError::Remote { code, .. } => code,
        }
    }
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Io(e.to_string())
    }
}
