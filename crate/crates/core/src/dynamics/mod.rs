//! Ground-truth rigid-body dynamics for serial revolute arms.

pub(crate) mod kinematics;
mod model;
mod perturbation;
mod rnea;

pub use kinematics::{forward_kinematics, jacobian, FlangePose};
pub use model::RobotModel;
pub use perturbation::{apply_perturbation, InstancePerturbation};
pub use rnea::{inverse_dynamics, mass_matrix, total_energy, Energy};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("{what}: expected {expected} joints, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{what} contains a non-finite value")]
    NonFinite { what: &'static str },
    #[error("invalid robot model field `{field}`: {message}")]
    InvalidModel { field: String, message: String },
    #[error("robot model file, line {line}: {message}")]
    ModelFile { line: usize, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),
}

/// Joint positions [rad], velocities [rad/s] and accelerations [rad/s^2].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub qdd: Vec<f64>,
}

impl JointState {
    pub fn new(q: Vec<f64>, qd: Vec<f64>, qdd: Vec<f64>) -> Self {
        Self { q, qd, qdd }
    }

    pub fn at_rest(q: Vec<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            qd: vec![0.0; n],
            qdd: vec![0.0; n],
        }
    }

    pub(crate) fn check(&self, model: &RobotModel) -> Result<(), DynamicsError> {
        model.check_len("q", self.q.len())?;
        model.check_len("qd", self.qd.len())?;
        model.check_len("qdd", self.qdd.len())?;
        for (what, values) in [("q", &self.q), ("qd", &self.qd), ("qdd", &self.qdd)] {
            if !values.iter().all(|v| v.is_finite()) {
                return Err(DynamicsError::NonFinite { what });
            }
        }
        Ok(())
    }
}

/// Joint torques [N m].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TorqueVector(pub Vec<f64>);

impl TorqueVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for TorqueVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}
