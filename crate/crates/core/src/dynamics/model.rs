//! Serial-arm description: kinematic chain, link inertia, joint limits.
//!
//! The on-disk form is a flat TOML document whose keys are exactly the
//! struct field names below. Every per-joint quantity is an array of length
//! `n_joints`, so a validation failure can always be pinned to the line that
//! defines the offending key.

use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::DynamicsError;

const DEFAULT_MODEL: &str = include_str!("../../configs/default_robot.toml");

/// Kinematic and inertial description of an N-joint revolute serial arm.
///
/// Kinematics use the modified Denavit-Hartenberg convention: frame `i` is
/// obtained from frame `i-1` by `Rot_x(alpha[i]) Trans_x(a[i]) Rot_z(q[i] +
/// theta_offset[i]) Trans_z(d[i])`. Inertia tensors are about the link's
/// center of mass, expressed in the link frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub name: String,
    pub n_joints: usize,
    /// Gravity acceleration in the base frame [m/s^2].
    pub gravity: [f64; 3],
    /// Flange origin expressed in the last link frame [m].
    #[serde(default)]
    pub flange_offset: [f64; 3],
    pub a: Vec<f64>,
    pub d: Vec<f64>,
    pub alpha: Vec<f64>,
    pub theta_offset: Vec<f64>,
    pub mass: Vec<f64>,
    pub com: Vec<[f64; 3]>,
    pub inertia: Vec<[[f64; 3]; 3]>,
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    pub qd_max: Vec<f64>,
    pub qdd_max: Vec<f64>,
    pub tau_max: Vec<f64>,
    /// Viscous friction coefficient per joint [N m s/rad].
    pub friction: Vec<f64>,
}

impl RobotModel {
    /// The shipped 7-joint arm (`configs/default_robot.toml`).
    pub fn default_arm() -> Self {
        Self::from_toml_str(DEFAULT_MODEL).expect("bundled robot model is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DynamicsError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DynamicsError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, DynamicsError> {
        let model: RobotModel = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|span| line_of_offset(text, span.start))
                .unwrap_or(0);
            DynamicsError::ModelFile {
                line,
                message: e.message().to_string(),
            }
        })?;
        model.validate().map_err(|err| match err {
            DynamicsError::InvalidModel { field, message } => DynamicsError::ModelFile {
                line: line_of_key(text, &field),
                message: format!("{field}: {message}"),
            },
            other => other,
        })?;
        Ok(model)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("robot model serializes")
    }

    /// Checks every structural and physical invariant of the model.
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let n = self.n_joints;
        if n == 0 {
            return Err(invalid("n_joints", "must be at least 1"));
        }
        let lengths: [(&str, usize); 13] = [
            ("a", self.a.len()),
            ("d", self.d.len()),
            ("alpha", self.alpha.len()),
            ("theta_offset", self.theta_offset.len()),
            ("mass", self.mass.len()),
            ("com", self.com.len()),
            ("inertia", self.inertia.len()),
            ("q_min", self.q_min.len()),
            ("q_max", self.q_max.len()),
            ("qd_max", self.qd_max.len()),
            ("qdd_max", self.qdd_max.len()),
            ("tau_max", self.tau_max.len()),
            ("friction", self.friction.len()),
        ];
        for (field, len) in lengths {
            if len != n {
                return Err(invalid(field, format!("expected {n} entries, found {len}")));
            }
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(invalid("gravity", "must be finite"));
        }
        if !self.flange_offset.iter().all(|v| v.is_finite()) {
            return Err(invalid("flange_offset", "must be finite"));
        }
        for (field, values) in [
            ("a", &self.a),
            ("d", &self.d),
            ("alpha", &self.alpha),
            ("theta_offset", &self.theta_offset),
        ] {
            if let Some(j) = values.iter().position(|v| !v.is_finite()) {
                return Err(invalid(field, format!("joint {j} is not finite")));
            }
        }
        for j in 0..n {
            if !(self.mass[j] > 0.0 && self.mass[j].is_finite()) {
                return Err(invalid("mass", format!("joint {j}: mass must be positive")));
            }
            if !self.com[j].iter().all(|v| v.is_finite()) {
                return Err(invalid("com", format!("joint {j}: not finite")));
            }
            let inertia = self.inertia_matrix(j);
            if !inertia.iter().all(|v| v.is_finite()) {
                return Err(invalid("inertia", format!("joint {j}: not finite")));
            }
            let asym = (inertia - inertia.transpose()).abs().max();
            if asym > 1e-12 * inertia.abs().max().max(1.0) {
                return Err(invalid("inertia", format!("joint {j}: not symmetric")));
            }
            if inertia.cholesky().is_none() {
                return Err(invalid(
                    "inertia",
                    format!("joint {j}: not positive definite"),
                ));
            }
            if !(self.q_min[j] < self.q_max[j]) {
                return Err(invalid("q_min", format!("joint {j}: q_min must be below q_max")));
            }
            for (field, value) in [
                ("qd_max", self.qd_max[j]),
                ("qdd_max", self.qdd_max[j]),
                ("tau_max", self.tau_max[j]),
            ] {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(invalid(field, format!("joint {j}: must be positive")));
                }
            }
            if !(self.friction[j] >= 0.0 && self.friction[j].is_finite()) {
                return Err(invalid("friction", format!("joint {j}: must be non-negative")));
            }
        }
        Ok(())
    }

    pub(crate) fn inertia_matrix(&self, joint: usize) -> Matrix3<f64> {
        let m = &self.inertia[joint];
        Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        )
    }

    /// A mid-range configuration with the elbow bent, used to seed IK.
    pub fn home_configuration(&self) -> Vec<f64> {
        if self.n_joints == 7 {
            let home = [0.0, -std::f64::consts::FRAC_PI_4, 0.0, -3.0 * std::f64::consts::FRAC_PI_4, 0.0, std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_4];
            let inside = home
                .iter()
                .enumerate()
                .all(|(j, q)| *q >= self.q_min[j] && *q <= self.q_max[j]);
            if inside {
                return home.to_vec();
            }
        }
        (0..self.n_joints)
            .map(|j| 0.5 * (self.q_min[j] + self.q_max[j]))
            .collect()
    }

    pub(crate) fn check_len(&self, what: &'static str, len: usize) -> Result<(), DynamicsError> {
        if len == self.n_joints {
            Ok(())
        } else {
            Err(DynamicsError::DimensionMismatch {
                what,
                expected: self.n_joints,
                found: len,
            })
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> DynamicsError {
    DynamicsError::InvalidModel {
        field: field.to_string(),
        message: message.into(),
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// 1-based line on which `key = ...` is defined, or 0 when absent.
fn line_of_key(text: &str, key: &str) -> usize {
    text.lines()
        .position(|line| {
            let trimmed = line.trim_start();
            trimmed
                .strip_prefix(key)
                .map(|rest| rest.trim_start().starts_with('='))
                .unwrap_or(false)
        })
        .map(|i| i + 1)
        .unwrap_or(0)
}
