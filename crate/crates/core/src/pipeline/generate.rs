use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PipelineConfig, PipelineError, StoreApi};
use crate::dynamics::{apply_perturbation, RobotModel};
use crate::store::{now_timestamp, Purpose, RobotTypeInfo, TrajectoryRecord};
use crate::trajectory::{iso_path, label_with_dynamics, sample_random_motion, NoiseModel, ProfileParams};
use super::SiteConfig;

/// A trajectory that could not be generated or labeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub purpose: Purpose,
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRun {
    pub site: String,
    pub instance_id: String,
    pub record_ids: Vec<String>,
    pub failures: Vec<GenerationFailure>,
}

fn stream_id(purpose: Purpose) -> u64 {
    match purpose {
        Purpose::Train => 1,
        Purpose::Validation => 2,
        Purpose::Evaluation => 3,
    }
}

fn draw(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..=range[1])
    } else {
        range[0]
    }
}

/// Mixes the run seed into a site's own seed.
pub(crate) fn site_seed(run_seed: u64, site: &SiteConfig) -> u64 {
    site.seed ^ run_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Generates and labels `count` records of one purpose for `site`, using
/// the site's perturbed copy of `nominal`. Training and validation records
/// are random point-to-point motions (waypoints optionally confined to
/// `waypoint_bounds`); evaluation records follow the ISO test path.
///
/// Sample payloads depend only on `seed`, `purpose` and the index; every
/// call assigns fresh record ids and timestamps.
pub fn generate_records(
    nominal: &RobotModel,
    site: &SiteConfig,
    commit: &str,
    seed: u64,
    purpose: Purpose,
    count: usize,
    waypoint_bounds: Option<&[[f64; 2]]>,
) -> Result<(Vec<TrajectoryRecord>, Vec<GenerationFailure>), PipelineError> {
    let model = apply_perturbation(nominal, &site.perturbation.for_instance(&site.instance_id))?;
    let mut records = Vec::with_capacity(count);
    let mut failures = Vec::new();
    for index in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((stream_id(purpose) << 32) | index as u64);
        let generated = (|| {
            let traj = if purpose == Purpose::Evaluation {
                iso_path(&model, &ProfileParams::evaluation(rng.random()))?
            } else {
                let vs = draw(&mut rng, site.velocity_scaling);
                let acc = draw(&mut rng, site.acceleration_scaling);
                let mut params = ProfileParams::new(vs, acc, site.n_waypoints, rng.random());
                params.waypoint_bounds = waypoint_bounds.map(<[_]>::to_vec);
                sample_random_motion(&model, &params)?
            };
            let samples = label_with_dynamics(&model, &traj, &NoiseModel::new(site.noise_sigma, rng.random()))?;
            Ok::<_, PipelineError>(TrajectoryRecord {
                record_id: uuid::Uuid::new_v4().to_string(),
                robot_type: nominal.name.clone(),
                instance_id: site.instance_id.clone(),
                site: site.name.clone(),
                purpose,
                velocity_scaling: traj.velocity_scaling,
                acceleration_scaling: traj.acceleration_scaling,
                software_commit: commit.to_string(),
                created_utc: now_timestamp(),
                dt: traj.dt,
                samples,
            })
        })();
        match generated {
            Ok(r) => records.push(r),
            Err(e) => failures.push(GenerationFailure { purpose, index, message: e.to_string() }),
        }
    }
    Ok((records, failures))
}

/// Generates the site's configured train/validation/evaluation mix and
/// ingests it. Records that fail to generate are listed; the rest are
/// ingested in one batch.
pub fn run_site(config: &PipelineConfig, store: &dyn StoreApi, site_name: &str) -> Result<SiteRun, PipelineError> {
    let site = config.site(site_name)?;
    let nominal = config.robot()?;
    store.register_robot_type(RobotTypeInfo::from(&nominal))?;
    let seed = site_seed(config.seed, site);
    let commit = config.commit();
    let mut all = Vec::new();
    let mut failures = Vec::new();
    for (purpose, count) in
        [(Purpose::Train, site.train), (Purpose::Validation, site.validation), (Purpose::Evaluation, site.evaluation)]
    {
        let (records, failed) = generate_records(&nominal, site, &commit, seed, purpose, count, None)?;
        all.extend(records);
        failures.extend(failed);
    }
    for f in &failures {
        log::warn!("site {}: {} #{} failed: {}", site.name, f.purpose, f.index, f.message);
    }
    let record_ids = if all.is_empty() { Vec::new() } else { store.ingest_batch(all)? };
    log::info!("site {}: ingested {} records", site.name, record_ids.len());
    Ok(SiteRun { site: site.name.clone(), instance_id: site.instance_id.clone(), record_ids, failures })
}
