use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::profile::{quintic_segment, QUINTIC_PEAK_ACCELERATION, QUINTIC_PEAK_VELOCITY};
use super::{JointTrajectory, ProfileParams, TrajectoryError, TrajectorySource};
use crate::dynamics::{JointState, RobotModel};

/// Random point-to-point joint motion: uniformly drawn waypoints joined by
/// rest-to-rest quintic segments, each as short as the scaled velocity and
/// acceleration limits allow (rounded up to whole sample periods).
pub fn sample_random_motion(
    model: &RobotModel,
    params: &ProfileParams,
) -> Result<JointTrajectory, TrajectoryError> {
    params.validate()?;
    if params.n_waypoints < 2 {
        return Err(TrajectoryError::InvalidParams(format!(
            "n_waypoints must be at least 2, got {}",
            params.n_waypoints
        )));
    }
    let n = model.n_joints;
    let bounds = waypoint_bounds(model, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let waypoints: Vec<Vec<f64>> = (0..params.n_waypoints)
        .map(|_| {
            bounds
                .iter()
                .map(|&[lo, hi]| if hi > lo { rng.random_range(lo..hi) } else { lo })
                .collect()
        })
        .collect();

    let dt = params.sample_dt;
    let mut samples = vec![JointState::at_rest(waypoints[0].clone())];
    for pair in waypoints.windows(2) {
        let (from, to) = (&pair[0], &pair[1]);
        let mut duration: f64 = 0.0;
        for j in 0..n {
            let delta = (to[j] - from[j]).abs();
            let vel = QUINTIC_PEAK_VELOCITY * delta / (params.velocity_scaling * model.qd_max[j]);
            let acc = (QUINTIC_PEAK_ACCELERATION * delta
                / (params.acceleration_scaling * model.qdd_max[j]))
                .sqrt();
            duration = duration.max(vel).max(acc);
        }
        let steps = ((duration / dt) - 1e-9).ceil().max(1.0) as usize;
        let duration = steps as f64 * dt;
        for k in 1..=steps {
            let t = if k == steps { duration } else { k as f64 * dt };
            let mut state = JointState::at_rest(vec![0.0; n]);
            for j in 0..n {
                let (q, qd, qdd) = quintic_segment(from[j], to[j], duration, t);
                state.q[j] = q;
                state.qd[j] = qd;
                state.qdd[j] = qdd;
            }
            samples.push(state);
        }
    }

    Ok(JointTrajectory {
        dt,
        samples,
        source: TrajectorySource::RandomMotion,
        velocity_scaling: params.velocity_scaling,
        acceleration_scaling: params.acceleration_scaling,
    })
}

fn waypoint_bounds(model: &RobotModel, params: &ProfileParams) -> Result<Vec<[f64; 2]>, TrajectoryError> {
    let n = model.n_joints;
    let limits: Vec<[f64; 2]> = (0..n).map(|j| [model.q_min[j], model.q_max[j]]).collect();
    let Some(requested) = &params.waypoint_bounds else {
        return Ok(limits);
    };
    if requested.len() != n {
        return Err(TrajectoryError::InvalidParams(format!(
            "waypoint_bounds has {} entries for {n} joints",
            requested.len()
        )));
    }
    requested
        .iter()
        .zip(&limits)
        .enumerate()
        .map(|(j, (&[lo, hi], &[min, max]))| {
            let (lo, hi) = (lo.max(min), hi.min(max));
            if lo > hi || !lo.is_finite() || !hi.is_finite() {
                Err(TrajectoryError::InvalidParams(format!(
                    "waypoint bounds for joint {j} do not intersect the joint limits"
                )))
            } else {
                Ok([lo, hi])
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_single_waypoint() {
        let model = RobotModel::default_arm();
        let params = ProfileParams::new(0.5, 0.5, 1, 0);
        assert!(matches!(
            sample_random_motion(&model, &params),
            Err(TrajectoryError::InvalidParams(_))
        ));
    }

    #[test]
    fn endpoints_at_rest() {
        let model = RobotModel::default_arm();
        let traj = sample_random_motion(&model, &ProfileParams::new(0.7, 0.4, 4, 3)).unwrap();
        for s in [traj.samples.first().unwrap(), traj.samples.last().unwrap()] {
            assert!(s.qd.iter().all(|v| *v == 0.0));
            assert!(s.qdd.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn bounded_waypoints_stay_in_box() {
        let model = RobotModel::default_arm();
        let mut params = ProfileParams::new(0.5, 0.5, 5, 8);
        let mut bounds: Vec<[f64; 2]> = (0..7).map(|j| [model.q_min[j], model.q_max[j]]).collect();
        bounds[1] = [0.5, 0.7];
        params.waypoint_bounds = Some(bounds);
        let traj = sample_random_motion(&model, &params).unwrap();
        assert!(traj.samples.iter().all(|s| s.q[1] >= 0.5 && s.q[1] < 0.7));
    }
}
