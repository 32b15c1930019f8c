//! Planar Cartesian test figure (square perimeter, both diagonals and the
//! inscribed circle) tracked with damped-least-squares differential IK.

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::profile::min_jerk;
use super::{JointTrajectory, ProfileParams, TrajectoryError, TrajectorySource};
use crate::dynamics::kinematics::{flange_position, position_jacobian};
use crate::dynamics::{JointState, RobotModel};

/// Largest allowed distance between the flange and the commanded figure [m].
pub const TRACKING_TOLERANCE: f64 = 1e-3;

const IK_CONVERGED: f64 = 1e-10;
const IK_MAX_ITER: usize = 200;
const APPROACH_MAX_ITER: usize = 5000;
const APPROACH_STEP: f64 = 0.02;
const SLOWDOWN: f64 = 0.7;
const MAX_SLOWDOWNS: usize = 12;

/// Placement and speed of the test figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoPlane {
    /// Figure center in the base frame [m].
    pub center: [f64; 3],
    /// Side length of the square [m]; the circle radius is half of it.
    pub side: f64,
    /// Orthonormal in-plane axes.
    pub u_axis: [f64; 3],
    pub v_axis: [f64; 3],
    /// Cartesian cruise speed and ramp acceleration at scaling 1.
    pub max_speed: f64,
    pub max_acceleration: f64,
    /// Damping factor of the least-squares IK step.
    pub damping: f64,
}

impl Default for IsoPlane {
    fn default() -> Self {
        Self {
            center: [0.45, 0.0, 0.40],
            side: 0.25,
            u_axis: [1.0, 0.0, 0.0],
            v_axis: [0.0, 1.0, 0.0],
            max_speed: 1.0,
            max_acceleration: 2.0,
            damping: 1e-2,
        }
    }
}

/// A tracked test figure together with its commanded Cartesian targets.
#[derive(Debug, Clone)]
pub struct IsoPath {
    pub trajectory: JointTrajectory,
    pub targets: Vec<[f64; 3]>,
    /// True for samples on the circle sub-path.
    pub on_circle: Vec<bool>,
    /// Center and radius of the circle sub-path.
    pub circle: ([f64; 3], f64),
    /// Cartesian cruise speed actually used [m/s].
    pub cruise_speed: f64,
}

#[derive(Debug, Clone, Copy)]
enum Piece {
    Line { from: Vector3<f64>, to: Vector3<f64> },
    Circle { center: Vector3<f64>, radius: f64 },
}

impl Piece {
    fn length(&self) -> f64 {
        match *self {
            Piece::Line { from, to } => (to - from).norm(),
            Piece::Circle { radius, .. } => 2.0 * std::f64::consts::PI * radius,
        }
    }

    fn eval(&self, s: f64, sdot: f64, u: &Vector3<f64>, v: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
        match *self {
            Piece::Line { from, to } => {
                let dir = (to - from) / self.length();
                (from + dir * s, dir * sdot)
            }
            Piece::Circle { center, radius } => {
                let phi = std::f64::consts::PI + s / radius;
                let (sp, cp) = phi.sin_cos();
                (center + radius * (cp * u + sp * v), sdot * (-sp * u + cp * v))
            }
        }
    }
}

/// Rest-to-rest path-length law: minimum-jerk speed ramps around a
/// constant-speed cruise.
#[derive(Debug, Clone, Copy)]
struct TimeLaw {
    length: f64,
    speed: f64,
    ramp: f64,
    cruise: f64,
}

impl TimeLaw {
    fn new(length: f64, speed: f64, accel: f64) -> Self {
        let ramp = 1.875 * speed / accel;
        if speed * ramp <= length {
            Self { length, speed, ramp, cruise: (length - speed * ramp) / speed }
        } else {
            let speed = (length * accel / 1.875).sqrt();
            Self { length, speed, ramp: 1.875 * speed / accel, cruise: 0.0 }
        }
    }

    fn duration(&self) -> f64 {
        2.0 * self.ramp + self.cruise
    }

    /// Path length and speed at time `t`.
    fn at(&self, t: f64) -> (f64, f64) {
        let ramp_integral = |x: f64| x.powi(4) * (2.5 - 3.0 * x + x * x);
        if self.length == 0.0 {
            return (0.0, 0.0);
        }
        if t <= self.ramp {
            let x = t / self.ramp;
            (self.speed * self.ramp * ramp_integral(x), self.speed * min_jerk(x).0)
        } else if t <= self.ramp + self.cruise {
            (0.5 * self.speed * self.ramp + self.speed * (t - self.ramp), self.speed)
        } else {
            let x = ((self.duration() - t) / self.ramp).clamp(0.0, 1.0);
            (self.length - self.speed * self.ramp * ramp_integral(x), self.speed * min_jerk(x).0)
        }
    }
}

fn figure(plane: &IsoPlane) -> (Vec<Piece>, Vector3<f64>, Vector3<f64>) {
    let c = Vector3::from(plane.center);
    let u = Vector3::from(plane.u_axis).normalize();
    let v = Vector3::from(plane.v_axis).normalize();
    let h = 0.5 * plane.side;
    let at = |x: f64, y: f64| c + x * u + y * v;
    let (p1, p2, p3, p4) = (at(-h, -h), at(h, -h), at(h, h), at(-h, h));
    let mid = at(-h, 0.0);
    let line = |from, to| Piece::Line { from, to };
    let pieces = vec![
        line(p1, p2),
        line(p2, p3),
        line(p3, p4),
        line(p4, p1),
        line(p1, p3),
        line(p3, p2),
        line(p2, p4),
        line(p4, mid),
        Piece::Circle { center: c, radius: h },
    ];
    (pieces, u, v)
}

/// Evaluation trajectory over the default plane.
pub fn iso_path(model: &RobotModel, params: &ProfileParams) -> Result<JointTrajectory, TrajectoryError> {
    Ok(plan_iso_path(model, params, &IsoPlane::default())?.trajectory)
}

pub fn plan_iso_path(
    model: &RobotModel,
    params: &ProfileParams,
    plane: &IsoPlane,
) -> Result<IsoPath, TrajectoryError> {
    params.validate()?;
    if !(plane.side > 0.0) || !(plane.max_speed > 0.0) || !(plane.max_acceleration > 0.0) {
        return Err(TrajectoryError::InvalidParams(
            "plane side, speed and acceleration must be positive".into(),
        ));
    }
    let (pieces, u, v) = figure(plane);
    let start = validate_reachable(model, plane, &pieces)?;

    let mut speed = params.velocity_scaling * plane.max_speed;
    let mut accel = params.acceleration_scaling * plane.max_acceleration;
    let mut last_excess = 0.0;
    for _ in 0..=MAX_SLOWDOWNS {
        let path = track(model, params, plane, &pieces, &u, &v, &start, speed, accel)?;
        let excess = path.trajectory.limit_excess(model);
        if excess <= 1e-9 {
            return Ok(path);
        }
        last_excess = excess;
        speed *= SLOWDOWN;
        accel *= SLOWDOWN;
    }
    Err(TrajectoryError::LimitsUnattainable(format!(
        "figure still exceeds scaled joint limits by {last_excess:.3e} after slowing down"
    )))
}

#[allow(clippy::too_many_arguments)]
fn track(
    model: &RobotModel,
    params: &ProfileParams,
    plane: &IsoPlane,
    pieces: &[Piece],
    u: &Vector3<f64>,
    v: &Vector3<f64>,
    start: &[f64],
    speed: f64,
    accel: f64,
) -> Result<IsoPath, TrajectoryError> {
    let laws: Vec<TimeLaw> = pieces.iter().map(|p| TimeLaw::new(p.length(), speed, accel)).collect();
    let total: f64 = laws.iter().map(TimeLaw::duration).sum();
    let dt = params.sample_dt;
    let steps = (total / dt).ceil() as usize;

    let n = model.n_joints;
    let mut q = start.to_vec();
    let mut positions = Vec::with_capacity(steps + 1);
    let mut velocities = Vec::with_capacity(steps + 1);
    let mut targets = Vec::with_capacity(steps + 1);
    let mut on_circle = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let mut t = (k as f64 * dt).min(total);
        let mut idx = 0;
        while idx + 1 < laws.len() && t > laws[idx].duration() {
            t -= laws[idx].duration();
            idx += 1;
        }
        let (s, sdot) = laws[idx].at(t.min(laws[idx].duration()));
        let (target, xdot) = pieces[idx].eval(s, sdot, u, v);
        let residual = solve_position(model, &mut q, &target, plane.damping, IK_MAX_ITER, f64::INFINITY);
        if residual > TRACKING_TOLERANCE {
            return Err(TrajectoryError::IkDiverged { sample: k, residual });
        }
        velocities.push(pseudo_inverse_rate(model, &q, &xdot));
        positions.push(q.clone());
        targets.push([target.x, target.y, target.z]);
        on_circle.push(matches!(pieces[idx], Piece::Circle { .. }));
    }

    let last = positions.len() - 1;
    let samples = (0..=last)
        .map(|k| {
            let qdd = if k == 0 || k == last {
                vec![0.0; n]
            } else {
                (0..n)
                    .map(|j| (velocities[k + 1][j] - velocities[k - 1][j]) / (2.0 * dt))
                    .collect()
            };
            let qd = if k == 0 || k == last { vec![0.0; n] } else { velocities[k].clone() };
            JointState::new(positions[k].clone(), qd, qdd)
        })
        .collect();

    let circle = match pieces.last() {
        Some(Piece::Circle { center, radius }) => ([center.x, center.y, center.z], *radius),
        _ => unreachable!("figure ends with the circle"),
    };
    Ok(IsoPath {
        trajectory: JointTrajectory {
            dt,
            samples,
            source: TrajectorySource::IsoPath,
            velocity_scaling: params.velocity_scaling,
            acceleration_scaling: params.acceleration_scaling,
        },
        targets,
        on_circle,
        circle,
        cruise_speed: speed,
    })
}

/// Solves IK for the figure's corners and circle extremes from the home
/// configuration and returns the joint configuration at the figure start.
fn validate_reachable(
    model: &RobotModel,
    plane: &IsoPlane,
    pieces: &[Piece],
) -> Result<Vec<f64>, TrajectoryError> {
    let home = model.home_configuration();
    let c = Vector3::from(plane.center);
    let u = Vector3::from(plane.u_axis).normalize();
    let v = Vector3::from(plane.v_axis).normalize();
    let h = 0.5 * plane.side;
    let mut checkpoints: Vec<Vector3<f64>> = pieces
        .iter()
        .filter_map(|p| match p {
            Piece::Line { from, .. } => Some(*from),
            Piece::Circle { .. } => None,
        })
        .collect();
    checkpoints.extend([c + h * u, c - h * u, c + h * v, c - h * v]);
    let mut start = None;
    for (i, target) in checkpoints.iter().enumerate() {
        let mut q = home.clone();
        let residual = solve_position(model, &mut q, target, plane.damping, APPROACH_MAX_ITER, APPROACH_STEP);
        if residual > TRACKING_TOLERANCE {
            return Err(TrajectoryError::Unreachable(format!(
                "point {:?} misses by {residual:.3e} m",
                [target.x, target.y, target.z]
            )));
        }
        if i == 0 {
            start = Some(q);
        }
    }
    Ok(start.expect("figure has corners"))
}

/// Damped-least-squares position IK from `q` in place; returns the final
/// Cartesian residual. Each correction is clamped to `max_step` meters and
/// joints are clamped to their limits after every step.
fn solve_position(
    model: &RobotModel,
    q: &mut [f64],
    target: &Vector3<f64>,
    damping: f64,
    max_iter: usize,
    max_step: f64,
) -> f64 {
    let lambda2 = damping * damping;
    let mut error = target - flange_position(model, q);
    for _ in 0..max_iter {
        if error.norm() < IK_CONVERGED {
            break;
        }
        let step_error = if error.norm() > max_step { error * (max_step / error.norm()) } else { error };
        let jac = position_jacobian(model, q);
        let jjt = &jac * jac.transpose() + Matrix3::identity() * lambda2;
        let Some(y) = jjt.lu().solve(&step_error) else { break };
        let dq = jac.transpose() * y;
        for j in 0..model.n_joints {
            q[j] = (q[j] + dq[j]).clamp(model.q_min[j], model.q_max[j]);
        }
        error = target - flange_position(model, q);
    }
    error.norm()
}

/// Minimum-norm joint rates producing flange velocity `xdot`.
fn pseudo_inverse_rate(model: &RobotModel, q: &[f64], xdot: &Vector3<f64>) -> Vec<f64> {
    let jac = position_jacobian(model, q);
    let jjt = &jac * jac.transpose();
    let y = jjt
        .lu()
        .solve(xdot)
        .or_else(|| (jjt + Matrix3::identity() * 1e-8).lu().solve(xdot))
        .unwrap_or_default();
    let rate: DVector<f64> = jac.transpose() * y;
    rate.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_law_is_rest_to_rest_and_covers_length() {
        for (len, speed, accel) in [(0.25, 0.25, 0.5), (0.01, 0.25, 0.5), (1.0, 1.0, 2.0)] {
            let law = TimeLaw::new(len, speed, accel);
            let (s0, v0) = law.at(0.0);
            let (s1, v1) = law.at(law.duration());
            assert_eq!((s0, v0), (0.0, 0.0));
            assert!((s1 - len).abs() < 1e-12);
            assert!(v1.abs() < 1e-12);
            assert!(law.speed <= speed + 1e-12);
        }
    }

    #[test]
    fn unreachable_plane_is_rejected() {
        let model = RobotModel::default_arm();
        let plane = IsoPlane { center: [3.0, 0.0, 0.5], ..IsoPlane::default() };
        assert!(matches!(
            plan_iso_path(&model, &ProfileParams::evaluation(0), &plane),
            Err(TrajectoryError::Unreachable(_))
        ));
    }
}
