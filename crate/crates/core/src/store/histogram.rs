use serde::{Deserialize, Serialize};

use super::record::TrajectoryRecord;
use super::StoreError;
use crate::dynamics::RobotModel;

/// Joint-limit envelope of a registered robot type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotTypeInfo {
    pub name: String,
    pub n_joints: usize,
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    /// Torque limits [N m]; optional, used to bound evaluation errors.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tau_max: Vec<f64>,
}

impl RobotTypeInfo {
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.name.trim().is_empty() {
            return Err(StoreError::schema("name", "must not be empty"));
        }
        if self.n_joints == 0 || self.q_min.len() != self.n_joints || self.q_max.len() != self.n_joints {
            return Err(StoreError::schema("n_joints", "joint limit arrays must have n_joints > 0 entries"));
        }
        for j in 0..self.n_joints {
            if !(self.q_min[j].is_finite() && self.q_max[j].is_finite() && self.q_min[j] < self.q_max[j]) {
                return Err(StoreError::schema("q_min", format!("joint {j} limits are not ordered")));
            }
        }
        if !self.tau_max.is_empty()
            && (self.tau_max.len() != self.n_joints || !self.tau_max.iter().all(|t| *t > 0.0 && t.is_finite()))
        {
            return Err(StoreError::schema("tau_max", "needs one positive limit per joint"));
        }
        Ok(())
    }
}

impl From<&RobotModel> for RobotTypeInfo {
    fn from(model: &RobotModel) -> Self {
        Self {
            name: model.name.clone(),
            n_joints: model.n_joints,
            q_min: model.q_min.clone(),
            q_max: model.q_max.clone(),
            tau_max: model.tau_max.clone(),
        }
    }
}

/// Joint-position histogram; `edges` has one more entry than `counts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub robot_type: String,
    pub joint_index: usize,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Index of the bin holding `q`; values beyond the limits land in the
    /// edge bins.
    pub fn bin_of(lo: f64, hi: f64, n_bins: usize, q: f64) -> usize {
        let x = ((q - lo) / (hi - lo) * n_bins as f64).floor();
        if x.is_nan() || x < 0.0 {
            0
        } else {
            (x as usize).min(n_bins - 1)
        }
    }
}

pub(crate) fn build_histogram<'a, I: IntoIterator<Item = &'a TrajectoryRecord>>(
    info: &RobotTypeInfo,
    joint_index: usize,
    n_bins: usize,
    records: I,
) -> Result<Histogram, StoreError> {
    if joint_index >= info.n_joints {
        return Err(StoreError::JointOutOfRange { joint_index, n_joints: info.n_joints });
    }
    if n_bins == 0 {
        return Err(StoreError::schema("n_bins", "must be at least 1"));
    }
    let (lo, hi) = (info.q_min[joint_index], info.q_max[joint_index]);
    let edges = (0..=n_bins).map(|i| edge(lo, hi, n_bins, i)).collect();
    let mut counts = vec![0u64; n_bins];
    for r in records {
        for s in &r.samples {
            counts[Histogram::bin_of(lo, hi, n_bins, s.q[joint_index])] += 1;
        }
    }
    Ok(Histogram { robot_type: info.name.clone(), joint_index, edges, counts })
}

/// Bin edge `i`; the outer edges are the limits exactly.
fn edge(lo: f64, hi: f64, n_bins: usize, i: usize) -> f64 {
    if i == n_bins {
        hi
    } else {
        (lo + (hi - lo) * i as f64 / n_bins as f64).min(hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outer_edges_are_the_joint_limits() {
        // 10 bins over these limits overshoot q_max by an ulp with naive arithmetic.
        let (lo, hi) = (-0.0175, 3.7525);
        assert_eq!(edge(lo, hi, 10, 0), lo);
        assert_eq!(edge(lo, hi, 10, 10), hi);
        assert!((0..=10).all(|i| edge(lo, hi, 10, i) <= hi));
    }

    #[test]
    fn bins_clamp_at_edges() {
        assert_eq!(Histogram::bin_of(0.0, 1.0, 4, -3.0), 0);
        assert_eq!(Histogram::bin_of(0.0, 1.0, 4, 1.0), 3);
        assert_eq!(Histogram::bin_of(0.0, 1.0, 4, 0.25), 1);
        assert_eq!(Histogram::bin_of(0.0, 1.0, 4, 7.0), 3);
    }
}
