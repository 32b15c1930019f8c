//! Training and evaluation motion generation with ground-truth torque labels.

mod iso;
mod label;
mod profile;
mod random_motion;

pub use iso::{iso_path, plan_iso_path, IsoPath, IsoPlane, TRACKING_TOLERANCE};
pub use label::{label_with_dynamics, NoiseModel, Sample};
pub use profile::{
    min_jerk, quintic_segment, JointTrajectory, ProfileParams, TrajectorySource,
    QUINTIC_PEAK_ACCELERATION, QUINTIC_PEAK_VELOCITY,
};
pub use random_motion::sample_random_motion;

use thiserror::Error;

use crate::dynamics::DynamicsError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("invalid profile: {0}")]
    InvalidParams(String),
    #[error("test plane unreachable: {0}")]
    Unreachable(String),
    #[error("IK diverged at sample {sample}: residual {residual:.3e} m")]
    IkDiverged { sample: usize, residual: f64 },
    #[error("{0}")]
    LimitsUnattainable(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}
