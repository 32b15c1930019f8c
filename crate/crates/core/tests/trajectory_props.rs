use d2k_core::dynamics::{forward_kinematics, inverse_dynamics, JointState, RobotModel};
use d2k_core::trajectory::{
    iso_path, label_with_dynamics, plan_iso_path, quintic_segment, sample_random_motion,
    IsoPlane, JointTrajectory, NoiseModel, ProfileParams, TrajectorySource,
};
use proptest::prelude::*;

#[test]
fn quintic_midpoint_velocity() {
    // s'(1/2) = 30/16 = 1.875, so qd(T/2) = 1.875 * dq / T.
    let (dq, duration) = (1.0, 2.0);
    let (_, qd, _) = quintic_segment(0.0, dq, duration, duration / 2.0);
    assert!((qd - 0.9375).abs() < 1e-12, "{qd}");
    assert!((qd - 1.875 * dq / duration).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_motion_respects_scaled_limits(
        seed in any::<u64>(),
        vel in 0.05f64..=1.0,
        acc in 0.05f64..=1.0,
        waypoints in 2usize..5,
    ) {
        let model = RobotModel::default_arm();
        let params = ProfileParams::new(vel, acc, waypoints, seed);
        let traj = sample_random_motion(&model, &params).unwrap();
        prop_assert!(traj.samples.len() >= 2);
        prop_assert!(traj.limit_excess(&model) <= 1e-9, "excess {}", traj.limit_excess(&model));
        prop_assert_eq!(traj.source, TrajectorySource::RandomMotion);
    }
}

#[test]
fn random_motion_is_deterministic() {
    let model = RobotModel::default_arm();
    let params = ProfileParams::new(0.6, 0.3, 4, 1234);
    let a = sample_random_motion(&model, &params).unwrap();
    let b = sample_random_motion(&model, &params).unwrap();
    let bits = |t: &JointTrajectory| -> Vec<u64> {
        t.samples
            .iter()
            .flat_map(|s| s.q.iter().chain(&s.qd).chain(&s.qdd).map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect()
    };
    assert_eq!(bits(&a), bits(&b));
    let c = sample_random_motion(&model, &ProfileParams::new(0.6, 0.3, 4, 1235)).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

/// Distance from `p` to the square, its diagonals and the inscribed circle,
/// computed in plane coordinates.
fn distance_to_figure(p: [f64; 3], plane: &IsoPlane) -> f64 {
    let c = plane.center;
    let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let (x, y) = (dot(d, plane.u_axis), dot(d, plane.v_axis));
    let normal_sq = dot(d, d) - x * x - y * y;
    let h = plane.side / 2.0;
    let seg = |ax: f64, ay: f64, bx: f64, by: f64| {
        let (vx, vy) = (bx - ax, by - ay);
        let t = (((x - ax) * vx + (y - ay) * vy) / (vx * vx + vy * vy)).clamp(0.0, 1.0);
        ((x - ax - t * vx).powi(2) + (y - ay - t * vy).powi(2)).sqrt()
    };
    let in_plane = [
        seg(-h, -h, h, -h),
        seg(h, -h, h, h),
        seg(h, h, -h, h),
        seg(-h, h, -h, -h),
        seg(-h, -h, h, h),
        seg(h, -h, -h, h),
        ((x * x + y * y).sqrt() - h).abs(),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    (in_plane * in_plane + normal_sq.max(0.0)).sqrt()
}

#[test]
fn iso_path_tracks_the_figure() {
    let model = RobotModel::default_arm();
    let plane = IsoPlane::default();
    let params = ProfileParams::evaluation(0);
    assert_eq!(params.velocity_scaling, 0.25);
    assert_eq!(params.acceleration_scaling, 0.25);
    let path = plan_iso_path(&model, &params, &plane).unwrap();
    let traj = &path.trajectory;
    assert_eq!(traj.source, TrajectorySource::IsoPath);
    assert!(traj.respects_limits(&model, 1e-9), "excess {}", traj.limit_excess(&model));

    let mut circle_samples = 0;
    for (k, s) in traj.samples.iter().enumerate() {
        let p = forward_kinematics(&model, &s.q).unwrap().position;
        let target = path.targets[k];
        let miss = ((p[0] - target[0]).powi(2) + (p[1] - target[1]).powi(2) + (p[2] - target[2]).powi(2)).sqrt();
        assert!(miss < 1e-3, "sample {k} misses its target by {miss}");
        assert!(distance_to_figure(p, &plane) < 1e-3, "sample {k} off the figure");
        if path.on_circle[k] {
            circle_samples += 1;
            let (c, r) = path.circle;
            let radial = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt();
            assert!((radial - r).abs() < 1e-3);
        }
    }
    assert!(circle_samples > 10);
}

#[test]
fn iso_path_derivatives_are_consistent() {
    let model = RobotModel::default_arm();
    let traj = iso_path(&model, &ProfileParams::evaluation(0)).unwrap();
    let dt = traj.dt;
    let s = &traj.samples;
    let mut worst_qd = 0.0f64;
    let mut worst_qdd = 0.0f64;
    for k in 1..s.len() - 1 {
        for j in 0..model.n_joints {
            let qd_fd = (s[k + 1].q[j] - s[k - 1].q[j]) / (2.0 * dt);
            worst_qd = worst_qd.max((qd_fd - s[k].qd[j]).abs());
            let qdd_fd = (s[k + 1].qd[j] - s[k - 1].qd[j]) / (2.0 * dt);
            worst_qdd = worst_qdd.max((qdd_fd - s[k].qdd[j]).abs());
        }
    }
    assert!(worst_qd < 1e-3, "velocity inconsistency {worst_qd:e}");
    assert!(worst_qdd < 1e-3, "acceleration inconsistency {worst_qdd:e}");
}

#[test]
fn noiseless_labels_equal_inverse_dynamics() {
    let model = RobotModel::default_arm();
    let traj = sample_random_motion(&model, &ProfileParams::new(0.5, 0.5, 3, 2)).unwrap();
    let labels = label_with_dynamics(&model, &traj, &NoiseModel::noiseless()).unwrap();
    for (sample, state) in labels.iter().zip(&traj.samples) {
        assert_eq!(sample.tau, inverse_dynamics(&model, state).unwrap().into_inner());
    }
}

#[test]
fn noisy_labels_are_reproducible_with_expected_spread() {
    let model = RobotModel::default_arm();
    let state = JointState::new(
        vec![0.1, -0.4, 0.2, -1.5, 0.3, 1.2, 0.0],
        vec![0.2; 7],
        vec![0.5; 7],
    );
    let traj = JointTrajectory {
        dt: 0.01,
        samples: vec![state.clone(); 10_000],
        source: TrajectorySource::RandomMotion,
        velocity_scaling: 1.0,
        acceleration_scaling: 1.0,
    };
    let noise = NoiseModel::new(0.05, 77);
    let a = label_with_dynamics(&model, &traj, &noise).unwrap();
    let b = label_with_dynamics(&model, &traj, &noise).unwrap();
    assert_eq!(a, b);

    let truth = inverse_dynamics(&model, &state).unwrap();
    let residuals: Vec<f64> = a.iter().map(|s| s.tau[2] - truth[2]).collect();
    let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
    let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / residuals.len() as f64;
    let std = var.sqrt();
    assert!((0.045..=0.055).contains(&std), "std {std}");
}
