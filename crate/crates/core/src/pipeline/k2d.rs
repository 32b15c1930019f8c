use serde::{Deserialize, Serialize};

use super::generate::{generate_records, site_seed};
use super::{PipelineConfig, PipelineError, StoreApi};
use crate::store::{DatasetQuery, Purpose, RobotTypeInfo};

/// Request to collect more motion inside one under-populated joint interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageDirective {
    pub joint_index: usize,
    /// `[lo, hi)` in rad, one histogram bin.
    pub interval: [f64; 2],
    pub requested_trajectories: usize,
    pub site: String,
    pub bin_count: u64,
    pub mean_count: f64,
}

/// One directive per `(joint, bin)` whose sample count is below
/// `threshold` times the joint's mean bin count.
pub fn k2d_directives(
    config: &PipelineConfig,
    store: &dyn StoreApi,
    query: &DatasetQuery,
) -> Result<Vec<CoverageDirective>, PipelineError> {
    let robot = config.robot()?;
    store.register_robot_type(RobotTypeInfo::from(&robot))?;
    let mut query = query.clone();
    query.robot_type.get_or_insert_with(|| robot.name.clone());
    let k2d = &config.k2d;
    let site = match &k2d.site {
        Some(s) => s.clone(),
        None => config.sites[0].name.clone(),
    };
    let mut out = Vec::new();
    for joint_index in 0..robot.n_joints {
        let h = store.histogram(&query, joint_index, k2d.n_bins)?;
        let total = h.total();
        if total == 0 {
            return Err(PipelineError::DegenerateHistogram { joint_index });
        }
        let mean = total as f64 / h.counts.len() as f64;
        for (b, &count) in h.counts.iter().enumerate() {
            if (count as f64) < k2d.threshold * mean {
                out.push(CoverageDirective {
                    joint_index,
                    interval: [h.edges[b], h.edges[b + 1]],
                    requested_trajectories: k2d.trajectories_per_directive,
                    site: site.clone(),
                    bin_count: count,
                    mean_count: mean,
                });
            }
        }
    }
    Ok(out)
}

/// Generates random training motions at the directive's site with the
/// target joint's waypoints confined to the interval, and ingests them.
pub fn apply_directive(
    config: &PipelineConfig,
    store: &dyn StoreApi,
    directive: &CoverageDirective,
) -> Result<Vec<String>, PipelineError> {
    let site = config.site(&directive.site)?;
    let robot = config.robot()?;
    let j = directive.joint_index;
    let [lo, hi] = directive.interval;
    if j >= robot.n_joints || !(lo < hi) || lo < robot.q_min[j] || hi > robot.q_max[j] {
        return Err(PipelineError::Config(format!(
            "directive interval [{lo}, {hi}) for joint {j} lies outside the joint limits"
        )));
    }
    let mut bounds: Vec<[f64; 2]> = (0..robot.n_joints).map(|k| [robot.q_min[k], robot.q_max[k]]).collect();
    bounds[j] = [lo, hi];
    let seed = site_seed(config.seed, site) ^ lo.to_bits().rotate_left(17) ^ (j as u64) << 56;
    let (records, failures) =
        generate_records(&robot, site, &config.commit(), seed, Purpose::Train, directive.requested_trajectories, Some(&bounds))?;
    if let Some(f) = failures.first() {
        return Err(PipelineError::InsufficientData(format!("directed motion #{} failed: {}", f.index, f.message)));
    }
    Ok(store.ingest_batch(records)?)
}
