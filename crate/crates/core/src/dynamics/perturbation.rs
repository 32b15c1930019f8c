use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{DynamicsError, RobotModel};

/// Deviations of one physical robot instance from the nominal model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstancePerturbation {
    pub instance_id: String,
    /// Per-link mass scale; inertia tensors scale alongside. Empty means 1.
    #[serde(default)]
    pub mass_scale: Vec<f64>,
    /// Point payload rigidly attached to the last link [kg].
    #[serde(default)]
    pub payload_mass: f64,
    /// Payload position relative to the flange, in the last link frame [m].
    #[serde(default)]
    pub payload_offset: [f64; 3],
    #[serde(default = "one")]
    pub friction_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl InstancePerturbation {
    pub fn identity(instance_id: impl Into<String>) -> Self {
        Self {
            instance_id: instance_id.into(),
            mass_scale: Vec::new(),
            payload_mass: 0.0,
            payload_offset: [0.0; 3],
            friction_scale: 1.0,
        }
    }
}

/// Applies an instance perturbation. Kinematics and limits are untouched.
pub fn apply_perturbation(
    model: &RobotModel,
    p: &InstancePerturbation,
) -> Result<RobotModel, DynamicsError> {
    let n = model.n_joints;
    if !p.mass_scale.is_empty() && p.mass_scale.len() != n {
        return Err(DynamicsError::InvalidPerturbation(format!(
            "mass_scale has {} entries for {n} links",
            p.mass_scale.len()
        )));
    }
    if !(p.friction_scale >= 0.0 && p.friction_scale.is_finite()) {
        return Err(DynamicsError::InvalidPerturbation(
            "friction_scale must be non-negative".into(),
        ));
    }
    if !(p.payload_mass >= 0.0 && p.payload_mass.is_finite()) {
        return Err(DynamicsError::InvalidPerturbation(
            "payload_mass must be non-negative".into(),
        ));
    }

    let mut out = model.clone();
    for (j, &scale) in p.mass_scale.iter().enumerate() {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(DynamicsError::InvalidPerturbation(format!(
                "link {j}: mass scale {scale} gives a non-positive mass"
            )));
        }
        out.mass[j] *= scale;
        for row in out.inertia[j].iter_mut() {
            row.iter_mut().for_each(|v| *v *= scale);
        }
    }
    for f in out.friction.iter_mut() {
        *f *= p.friction_scale;
    }

    if p.payload_mass > 0.0 {
        let last = n - 1;
        let m_link = out.mass[last];
        let c_link = Vector3::from(out.com[last]);
        let at = Vector3::from(model.flange_offset) + Vector3::from(p.payload_offset);
        let m_total = m_link + p.payload_mass;
        let c_total = (m_link * c_link + p.payload_mass * at) / m_total;
        let shift = |mass: f64, r: Vector3<f64>| -> Matrix3<f64> {
            mass * (Matrix3::identity() * r.norm_squared() - r * r.transpose())
        };
        let inertia = out.inertia_matrix(last)
            + shift(m_link, c_link - c_total)
            + shift(p.payload_mass, at - c_total);
        out.mass[last] = m_total;
        out.com[last] = [c_total.x, c_total.y, c_total.z];
        for (r, row) in out.inertia[last].iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = 0.5 * (inertia[(r, c)] + inertia[(c, r)]);
            }
        }
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_noop() {
        let model = RobotModel::default_arm();
        let out = apply_perturbation(&model, &InstancePerturbation::identity("a")).unwrap();
        assert_eq!(out, model);
        let explicit = InstancePerturbation {
            mass_scale: vec![1.0; 7],
            ..InstancePerturbation::identity("a")
        };
        assert_eq!(apply_perturbation(&model, &explicit).unwrap(), model);
    }

    #[test]
    fn payload_adds_mass_to_last_link() {
        let model = RobotModel::default_arm();
        let p = InstancePerturbation {
            payload_mass: 1.0,
            ..InstancePerturbation::identity("a")
        };
        let out = apply_perturbation(&model, &p).unwrap();
        assert_eq!(out.mass[6], model.mass[6] + 1.0);
        assert_eq!(out.mass[..6], model.mass[..6]);
        assert_eq!(out.a, model.a);
        assert_eq!(out.q_max, model.q_max);
    }

    #[test]
    fn non_positive_mass_rejected() {
        let model = RobotModel::default_arm();
        let mut scale = vec![1.0; 7];
        scale[3] = 0.0;
        let p = InstancePerturbation {
            mass_scale: scale,
            ..InstancePerturbation::identity("a")
        };
        assert!(matches!(
            apply_perturbation(&model, &p),
            Err(DynamicsError::InvalidPerturbation(_))
        ));
    }
}
