use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{JointTrajectory, TrajectoryError};
use crate::dynamics::{inverse_dynamics, RobotModel};

/// One labeled measurement: joint state and the torque that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub qdd: Vec<f64>,
    pub tau: Vec<f64>,
}

/// Additive Gaussian torque-sensor noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Standard deviation per joint [N m].
    #[serde(default = "default_sigma")]
    pub torque_noise_sigma: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_sigma() -> f64 {
    0.05
}

impl NoiseModel {
    pub fn new(torque_noise_sigma: f64, rng_seed: u64) -> Self {
        Self { torque_noise_sigma, rng_seed }
    }

    pub fn noiseless() -> Self {
        Self::new(0.0, 0)
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::new(default_sigma(), 0)
    }
}

/// Labels every trajectory sample with inverse-dynamics torque plus noise.
pub fn label_with_dynamics(
    model: &RobotModel,
    traj: &JointTrajectory,
    noise: &NoiseModel,
) -> Result<Vec<Sample>, TrajectoryError> {
    let sigma = noise.torque_noise_sigma;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(TrajectoryError::InvalidParams(format!(
            "torque noise sigma must be non-negative, got {sigma}"
        )));
    }
    let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("sigma is valid");
    let mut rng = ChaCha8Rng::seed_from_u64(noise.rng_seed);
    traj.samples
        .iter()
        .map(|state| {
            let mut tau = inverse_dynamics(model, state)?.into_inner();
            if sigma > 0.0 {
                for t in tau.iter_mut() {
                    *t += normal.sample(&mut rng);
                }
            }
            Ok(Sample {
                q: state.q.clone(),
                qd: state.qd.clone(),
                qdd: state.qdd.clone(),
                tau,
            })
        })
        .collect()
}
