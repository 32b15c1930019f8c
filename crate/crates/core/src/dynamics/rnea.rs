use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::kinematics::{link_frames, link_transform};
use super::{DynamicsError, JointState, RobotModel, TorqueVector};

/// Kinetic and potential energy [J]. Potential energy is zero when every
/// center of mass sits at the base-frame origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Energy {
    pub kinetic: f64,
    pub potential: f64,
}

impl Energy {
    pub fn total(&self) -> f64 {
        self.kinetic + self.potential
    }
}

struct LinkKinematics {
    rotation: Matrix3<f64>,
    origin: Vector3<f64>,
}

/// Joint torques for the given motion via the recursive Newton-Euler
/// algorithm, including viscous joint friction.
pub fn inverse_dynamics(model: &RobotModel, state: &JointState) -> Result<TorqueVector, DynamicsError> {
    state.check(model)?;
    Ok(TorqueVector(rnea(model, state, Vector3::from(model.gravity), true)))
}

fn rnea(model: &RobotModel, state: &JointState, gravity: Vector3<f64>, friction: bool) -> Vec<f64> {
    let n = model.n_joints;
    let z = Vector3::z();

    let mut links = Vec::with_capacity(n);
    let mut forces = Vec::with_capacity(n);
    let mut moments = Vec::with_capacity(n);

    // Outward pass: velocities and accelerations in each link frame. Gravity
    // enters as a fictitious upward acceleration of the base.
    let mut omega = Vector3::zeros();
    let mut omega_dot = Vector3::zeros();
    let mut accel = -gravity;
    for j in 0..n {
        let (rotation, origin) = link_transform(model, j, state.q[j]);
        let rt = rotation.transpose();
        let qd = state.qd[j];
        let qdd = state.qdd[j];

        let parent_omega = rt * omega;
        let new_omega = parent_omega + z * qd;
        let new_omega_dot = rt * omega_dot + parent_omega.cross(&(z * qd)) + z * qdd;
        let new_accel = rt * (omega_dot.cross(&origin) + omega.cross(&omega.cross(&origin)) + accel);

        let com = Vector3::from(model.com[j]);
        let inertia = model.inertia_matrix(j);
        let com_accel = new_omega_dot.cross(&com) + new_omega.cross(&new_omega.cross(&com)) + new_accel;
        forces.push(model.mass[j] * com_accel);
        moments.push(inertia * new_omega_dot + new_omega.cross(&(inertia * new_omega)));

        omega = new_omega;
        omega_dot = new_omega_dot;
        accel = new_accel;
        links.push(LinkKinematics { rotation, origin });
    }

    // Inward pass: propagate wrenches from the flange to the base.
    let mut tau = vec![0.0; n];
    let mut f_child = Vector3::zeros();
    let mut n_child = Vector3::zeros();
    for j in (0..n).rev() {
        let com = Vector3::from(model.com[j]);
        let (f_from_child, n_from_child) = if j + 1 < n {
            let child = &links[j + 1];
            let f = child.rotation * f_child;
            (f, child.rotation * n_child + child.origin.cross(&f))
        } else {
            (Vector3::zeros(), Vector3::zeros())
        };
        let f = forces[j] + f_from_child;
        let moment = moments[j] + n_from_child + com.cross(&forces[j]);
        tau[j] = moment.z;
        if friction {
            tau[j] += model.friction[j] * state.qd[j];
        }
        f_child = f;
        n_child = moment;
    }
    tau
}

/// Joint-space inertia matrix assembled column by column from
/// gravity-free, velocity-free inverse dynamics with unit accelerations.
pub fn mass_matrix(model: &RobotModel, q: &[f64]) -> Result<DMatrix<f64>, DynamicsError> {
    let n = model.n_joints;
    let mut state = JointState::at_rest(q.to_vec());
    state.check(model)?;
    let mut m = DMatrix::zeros(n, n);
    for col in 0..n {
        state.qdd.iter_mut().for_each(|v| *v = 0.0);
        state.qdd[col] = 1.0;
        let tau = rnea(model, &state, Vector3::zeros(), false);
        for row in 0..n {
            m[(row, col)] = tau[row];
        }
    }
    Ok(m)
}

/// Kinetic and potential energy of the arm. Accelerations are ignored.
pub fn total_energy(model: &RobotModel, state: &JointState) -> Result<Energy, DynamicsError> {
    model.check_len("q", state.q.len())?;
    model.check_len("qd", state.qd.len())?;
    let gravity = Vector3::from(model.gravity);
    let frames = link_frames(model, &state.q);
    let z = Vector3::z();

    let mut kinetic = 0.0;
    let mut potential = 0.0;
    let mut omega = Vector3::zeros();
    let mut velocity = Vector3::zeros();
    for j in 0..model.n_joints {
        let (rotation, origin) = link_transform(model, j, state.q[j]);
        let rt = rotation.transpose();
        velocity = rt * (velocity + omega.cross(&origin));
        omega = rt * omega + z * state.qd[j];

        let com = Vector3::from(model.com[j]);
        let inertia = model.inertia_matrix(j);
        let com_velocity = velocity + omega.cross(&com);
        kinetic += 0.5 * model.mass[j] * com_velocity.norm_squared()
            + 0.5 * omega.dot(&(inertia * omega));

        let (r_base, p_base) = &frames[j];
        let com_base = p_base + r_base * com;
        potential -= model.mass[j] * gravity.dot(&com_base);
    }
    Ok(Energy { kinetic, potential })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_forces_give_zero_torque() {
        let mut model = RobotModel::default_arm();
        model.gravity = [0.0; 3];
        let state = JointState::at_rest(vec![0.4, -0.3, 1.0, -1.2, 0.2, 1.1, -0.5]);
        let tau = inverse_dynamics(&model, &state).unwrap();
        assert!(tau.as_slice().iter().all(|t| *t == 0.0), "{tau:?}");
    }

    #[test]
    fn at_rest_has_no_kinetic_energy() {
        let model = RobotModel::default_arm();
        let state = JointState::at_rest(vec![0.4, -0.3, 1.0, -1.2, 0.2, 1.1, -0.5]);
        assert_eq!(total_energy(&model, &state).unwrap().kinetic, 0.0);
    }

    #[test]
    fn rejects_bad_dimensions_and_nan() {
        let model = RobotModel::default_arm();
        let short = JointState::at_rest(vec![0.0; 6]);
        assert!(matches!(
            inverse_dynamics(&model, &short),
            Err(DynamicsError::DimensionMismatch { .. })
        ));
        let mut nan = JointState::at_rest(vec![0.0; 7]);
        nan.qd[3] = f64::NAN;
        assert!(matches!(
            inverse_dynamics(&model, &nan),
            Err(DynamicsError::NonFinite { what: "qd" })
        ));
    }

    #[test]
    fn deterministic() {
        let model = RobotModel::default_arm();
        let state = JointState::new(
            vec![0.1, 0.2, 0.3, -1.0, 0.5, 1.0, 0.0],
            vec![0.5, -0.4, 0.3, 0.2, -0.1, 0.6, 1.0],
            vec![1.0, -2.0, 0.5, 0.3, -1.2, 2.0, 0.7],
        );
        let a = inverse_dynamics(&model, &state).unwrap();
        let b = inverse_dynamics(&model, &state).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
