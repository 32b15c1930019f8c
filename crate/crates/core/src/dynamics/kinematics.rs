use nalgebra::{DMatrix, Matrix3, Matrix3xX, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{DynamicsError, RobotModel};

/// Flange position in the base frame and orientation as a unit quaternion
/// stored `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlangePose {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

/// Rotation and origin of frame `joint` relative to frame `joint - 1`.
pub(crate) fn link_transform(model: &RobotModel, joint: usize, q: f64) -> (Matrix3<f64>, Vector3<f64>) {
    let (sa, ca) = model.alpha[joint].sin_cos();
    let (st, ct) = (q + model.theta_offset[joint]).sin_cos();
    let a = model.a[joint];
    let d = model.d[joint];
    // Rot_x(alpha) * Rot_z(theta)
    let rotation = Matrix3::new(
        ct,
        -st,
        0.0,
        st * ca,
        ct * ca,
        -sa,
        st * sa,
        ct * sa,
        ca,
    );
    let origin = Vector3::new(a, -sa * d, ca * d);
    (rotation, origin)
}

/// Base-frame rotation and origin of every link frame, in chain order.
pub(crate) fn link_frames(model: &RobotModel, q: &[f64]) -> Vec<(Matrix3<f64>, Vector3<f64>)> {
    let mut frames = Vec::with_capacity(model.n_joints);
    let mut rotation = Matrix3::identity();
    let mut origin = Vector3::zeros();
    for (j, &qj) in q.iter().enumerate() {
        let (r, p) = link_transform(model, j, qj);
        origin += rotation * p;
        rotation *= r;
        frames.push((rotation, origin));
    }
    frames
}

pub(crate) fn flange_position(model: &RobotModel, q: &[f64]) -> Vector3<f64> {
    let frames = link_frames(model, q);
    let (r, p) = frames.last().expect("model has at least one joint");
    p + r * Vector3::from(model.flange_offset)
}

/// Linear rows of the flange Jacobian.
pub(crate) fn position_jacobian(model: &RobotModel, q: &[f64]) -> Matrix3xX<f64> {
    let frames = link_frames(model, q);
    let (r_n, p_n) = frames.last().expect("model has at least one joint");
    let flange = p_n + r_n * Vector3::from(model.flange_offset);
    let mut jac = Matrix3xX::zeros(model.n_joints);
    for (j, (r, origin)) in frames.iter().enumerate() {
        let axis = r.column(2).into_owned();
        jac.set_column(j, &axis.cross(&(flange - origin)));
    }
    jac
}

pub fn forward_kinematics(model: &RobotModel, q: &[f64]) -> Result<FlangePose, DynamicsError> {
    model.check_len("q", q.len())?;
    if !q.iter().all(|v| v.is_finite()) {
        return Err(DynamicsError::NonFinite { what: "q" });
    }
    let frames = link_frames(model, q);
    let (r, p) = frames.last().expect("model has at least one joint");
    let position = p + r * Vector3::from(model.flange_offset);
    let quat = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix(r));
    Ok(FlangePose {
        position: [position.x, position.y, position.z],
        orientation: [quat.w, quat.i, quat.j, quat.k],
    })
}

/// Geometric Jacobian of the flange, rows 0..3 linear and 3..6 angular
/// velocity, both in the base frame.
pub fn jacobian(model: &RobotModel, q: &[f64]) -> Result<DMatrix<f64>, DynamicsError> {
    model.check_len("q", q.len())?;
    if !q.iter().all(|v| v.is_finite()) {
        return Err(DynamicsError::NonFinite { what: "q" });
    }
    Ok(jacobian_unchecked(model, q))
}

pub(crate) fn jacobian_unchecked(model: &RobotModel, q: &[f64]) -> DMatrix<f64> {
    let frames = link_frames(model, q);
    let (r_n, p_n) = frames.last().expect("model has at least one joint");
    let flange = p_n + r_n * Vector3::from(model.flange_offset);
    let mut jac = DMatrix::zeros(6, model.n_joints);
    for (j, (r, origin)) in frames.iter().enumerate() {
        let axis = r.column(2).into_owned();
        let linear = axis.cross(&(flange - origin));
        for k in 0..3 {
            jac[(k, j)] = linear[k];
            jac[(k + 3, j)] = axis[k];
        }
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn one_link(reach: f64) -> RobotModel {
        RobotModel {
            name: "one-link".into(),
            n_joints: 1,
            gravity: [0.0, 0.0, -9.81],
            flange_offset: [reach, 0.0, 0.0],
            a: vec![0.0],
            d: vec![0.0],
            alpha: vec![0.0],
            theta_offset: vec![0.0],
            mass: vec![1.0],
            com: vec![[reach, 0.0, 0.0]],
            inertia: vec![[[1e-3, 0.0, 0.0], [0.0, 1e-3, 0.0], [0.0, 0.0, 1e-3]]],
            q_min: vec![-PI],
            q_max: vec![PI],
            qd_max: vec![1.0],
            qdd_max: vec![1.0],
            tau_max: vec![10.0],
            friction: vec![0.0],
        }
    }

    #[test]
    fn home_pose_is_chain_of_offsets() {
        let mut model = RobotModel::default_arm();
        model.alpha = vec![0.0; 7];
        let pose = forward_kinematics(&model, &[0.0; 7]).unwrap();
        let x: f64 = model.a.iter().sum();
        let z: f64 = model.d.iter().sum::<f64>() + model.flange_offset[2];
        assert!((pose.position[0] - x).abs() < 1e-15);
        assert!(pose.position[1].abs() < 1e-15);
        assert!((pose.position[2] - z).abs() < 1e-15);
        assert_eq!(pose.orientation, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn one_link_half_turn_reflects_through_axis() {
        let model = one_link(0.7);
        let p0 = forward_kinematics(&model, &[0.0]).unwrap().position;
        let p1 = forward_kinematics(&model, &[PI]).unwrap().position;
        assert!((p0[0] + p1[0]).abs() < 1e-12);
        assert!((p0[1] + p1[1]).abs() < 1e-12);
        assert!((p0[2] - p1[2]).abs() < 1e-12);
    }

    #[test]
    fn one_link_jacobian_is_axis_cross_radius() {
        let model = one_link(0.5);
        let q = 0.3;
        let jac = jacobian(&model, &[q]).unwrap();
        let r = Vector3::new(0.5 * q.cos(), 0.5 * q.sin(), 0.0);
        let expected = Vector3::z().cross(&r);
        for k in 0..3 {
            assert!((jac[(k, 0)] - expected[k]).abs() < 1e-15);
        }
        assert_eq!(jac[(5, 0)], 1.0);
    }

    #[test]
    fn quaternion_is_unit() {
        let model = RobotModel::default_arm();
        let pose = forward_kinematics(&model, &[0.3, -0.2, 0.5, -1.5, 0.4, 1.2, -0.7]).unwrap();
        let norm: f64 = pose.orientation.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let model = RobotModel::default_arm();
        assert!(matches!(
            forward_kinematics(&model, &[0.0; 3]),
            Err(DynamicsError::DimensionMismatch { .. })
        ));
        assert!(jacobian(&model, &[0.0; 8]).is_err());
    }

    #[test]
    fn jacobian_ignores_torque_limits() {
        let model = RobotModel::default_arm();
        let mut edited = model.clone();
        edited.tau_max = vec![1.0; 7];
        let q = [0.1, 0.2, -0.3, -1.0, 0.5, 1.5, 0.2];
        assert_eq!(jacobian(&model, &q).unwrap(), jacobian(&edited, &q).unwrap());
    }
}
