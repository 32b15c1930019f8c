use serde::{Deserialize, Serialize};

use super::TrajectoryError;
use crate::dynamics::{JointState, RobotModel};

/// Peak of the normalized minimum-jerk velocity `s'(tau)`, reached at tau = 1/2.
pub const QUINTIC_PEAK_VELOCITY: f64 = 1.875;
/// Peak of the normalized minimum-jerk acceleration `|s''(tau)|` (= 10 / sqrt 3).
pub const QUINTIC_PEAK_ACCELERATION: f64 = 5.773_502_691_896_258;

/// Motion-profile settings for a generated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileParams {
    pub velocity_scaling: f64,
    pub acceleration_scaling: f64,
    #[serde(default = "default_dt")]
    pub sample_dt: f64,
    pub n_waypoints: usize,
    pub rng_seed: u64,
    /// Optional per-joint `[lo, hi]` box that random waypoints are drawn
    /// from, intersected with the joint limits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waypoint_bounds: Option<Vec<[f64; 2]>>,
}

fn default_dt() -> f64 {
    0.01
}

impl ProfileParams {
    pub fn new(velocity_scaling: f64, acceleration_scaling: f64, n_waypoints: usize, rng_seed: u64) -> Self {
        Self {
            velocity_scaling,
            acceleration_scaling,
            sample_dt: default_dt(),
            n_waypoints,
            rng_seed,
            waypoint_bounds: None,
        }
    }

    /// Evaluation profile: both scalings fixed at 0.25.
    pub fn evaluation(rng_seed: u64) -> Self {
        Self::new(0.25, 0.25, 2, rng_seed)
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        for (name, s) in [
            ("velocity_scaling", self.velocity_scaling),
            ("acceleration_scaling", self.acceleration_scaling),
        ] {
            if !(s > 0.0 && s <= 1.0) {
                return Err(TrajectoryError::InvalidParams(format!(
                    "{name} must lie in (0, 1], got {s}"
                )));
            }
        }
        if !(self.sample_dt > 0.0 && self.sample_dt.is_finite()) {
            return Err(TrajectoryError::InvalidParams("sample_dt must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectorySource {
    RandomMotion,
    IsoPath,
}

/// Uniformly sampled joint-space motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTrajectory {
    pub dt: f64,
    pub samples: Vec<JointState>,
    pub source: TrajectorySource,
    pub velocity_scaling: f64,
    pub acceleration_scaling: f64,
}

impl JointTrajectory {
    /// Largest violation of the position, scaled velocity and scaled
    /// acceleration limits; zero or negative means every sample complies.
    pub fn limit_excess(&self, model: &RobotModel) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for s in &self.samples {
            for j in 0..model.n_joints {
                worst = worst
                    .max(model.q_min[j] - s.q[j])
                    .max(s.q[j] - model.q_max[j])
                    .max(s.qd[j].abs() - self.velocity_scaling * model.qd_max[j])
                    .max(s.qdd[j].abs() - self.acceleration_scaling * model.qdd_max[j]);
            }
        }
        worst
    }

    pub fn respects_limits(&self, model: &RobotModel, tol: f64) -> bool {
        self.samples.len() >= 2 && self.limit_excess(model) <= tol
    }

    pub fn duration(&self) -> f64 {
        self.dt * (self.samples.len().saturating_sub(1)) as f64
    }
}

/// Minimum-jerk rest-to-rest blend `s(tau) = 10 tau^3 - 15 tau^4 + 6 tau^5`
/// and its first two derivatives with respect to tau.
pub fn min_jerk(tau: f64) -> (f64, f64, f64) {
    let t2 = tau * tau;
    let t3 = t2 * tau;
    let s = t3 * (10.0 - 15.0 * tau + 6.0 * t2);
    let sd = 30.0 * t2 * (1.0 - 2.0 * tau + t2);
    let sdd = 60.0 * tau * (1.0 - 3.0 * tau + 2.0 * t2);
    (s, sd, sdd)
}

/// Position, velocity and acceleration at time `t` of a rest-to-rest
/// quintic from `q0` to `q1` lasting `duration`.
pub fn quintic_segment(q0: f64, q1: f64, duration: f64, t: f64) -> (f64, f64, f64) {
    let delta = q1 - q0;
    let tau = (t / duration).clamp(0.0, 1.0);
    let (s, sd, sdd) = min_jerk(tau);
    (q0 + delta * s, delta * sd / duration, delta * sdd / (duration * duration))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quintic_boundary_conditions_are_exact() {
        let (q, qd, qdd) = quintic_segment(0.0, 1.0, 2.0, 0.0);
        assert_eq!((q, qd, qdd), (0.0, 0.0, 0.0));
        let (q, qd, qdd) = quintic_segment(0.0, 1.0, 2.0, 2.0);
        assert_eq!((q, qd, qdd), (1.0, 0.0, 0.0));
    }

    #[test]
    fn peak_acceleration_constant() {
        let tau = (3.0 - 3f64.sqrt()) / 6.0;
        assert!((min_jerk(tau).2 - QUINTIC_PEAK_ACCELERATION).abs() < 1e-12);
        let grid_max = (0..=100_000)
            .map(|i| min_jerk(i as f64 / 100_000.0).2.abs())
            .fold(0.0, f64::max);
        assert!(grid_max <= QUINTIC_PEAK_ACCELERATION + 1e-12);
    }

    #[test]
    fn scaling_validation() {
        assert!(ProfileParams::new(0.0, 0.5, 2, 0).validate().is_err());
        assert!(ProfileParams::new(0.5, 1.5, 2, 0).validate().is_err());
        assert!(ProfileParams::new(1.0, 1.0, 2, 0).validate().is_ok());
    }
}
