use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::agent::load_sequences;
use super::{run_round, PipelineConfig, PipelineError, RoundOutcome, RunMode, StoreApi, SweepApi};
use crate::fsutil::write_atomic;
use crate::learner::EvalReport;
use crate::store::{DatasetQuery, DatasetStats, Field, Purpose, ShadowView};
use crate::sweep::{BestModel, RoundSpec, Setup, Target};

/// Persisted views feeding one training target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetViews {
    pub train: String,
    pub validation: String,
    pub evaluation: String,
}

fn slug(target: &Target) -> String {
    match target {
        Target::Foundation => "foundation".to_string(),
        Target::Instance(id) => format!("instance-{id}"),
    }
}

pub(crate) fn target_query(target: &Target) -> DatasetQuery {
    match target {
        Target::Foundation => DatasetQuery::all(),
        Target::Instance(id) => DatasetQuery::all().with_instances([id.clone()]),
    }
}

/// View ids for `target`; see [`ensure_views`].
pub fn target_views(target: &Target) -> TargetViews {
    let s = slug(target);
    TargetViews { train: format!("{s}-train"), validation: format!("{s}-validation"), evaluation: format!("{s}-evaluation") }
}

/// Creates the target's train/validation/evaluation views if missing.
/// Views hold queries, so resolving them later sees newly ingested data.
pub fn ensure_views(store: &dyn StoreApi, target: &Target) -> Result<TargetViews, PipelineError> {
    let ids = target_views(target);
    let projection = vec![Field::RecordId, Field::Purpose, Field::Q, Field::Qd, Field::Qdd, Field::Tau];
    for (id, purpose) in
        [(&ids.train, Purpose::Train), (&ids.validation, Purpose::Validation), (&ids.evaluation, Purpose::Evaluation)]
    {
        let mut query = target_query(target);
        query.purpose = Some(purpose);
        let mut view = ShadowView::new(id.clone(), query, projection.clone());
        view.description = format!("{purpose} data for {target}");
        store.ensure_view(view)?;
    }
    Ok(ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Ok,
    Aborted,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub step: u8,
    pub name: String,
    pub status: StepStatus,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NightlyReport {
    pub run_id: String,
    pub target: Target,
    pub started_utc: String,
    pub finished_utc: String,
    /// Always three entries: data pull, sweep, gate and evaluation.
    pub steps: Vec<StepOutcome>,
    pub stats: Option<DatasetStats>,
    pub training_sequences: usize,
    /// Cross-validation folds behind every reported loss.
    pub folds: usize,
    pub round: Option<RoundOutcome>,
    pub best_before: Option<BestModel>,
    pub best_after: Option<BestModel>,
    pub evaluation: Option<EvalReport>,
    /// Largest simulated torque-sensor noise over the sites [N m].
    pub simulated_noise_sigma: f64,
    /// Reference sensor accuracy the noise is compared with [N m].
    pub reference_floor: f64,
    pub aborted: Option<String>,
    pub report_path: Option<PathBuf>,
}

impl NightlyReport {
    pub fn completed(&self) -> bool {
        self.aborted.is_none()
    }
}

fn now() -> String {
    crate::store::now_timestamp()
}

/// One nightly pass for `target`:
/// 1. resolve the target's views and persist dataset statistics under the
///    run id;
/// 2. open a sweep round and train its configurations with local agents;
/// 3. let the coordinator gate every report, then read back the accepted
///    model's evaluation.
///
/// Service failures abort the run but still return the partial report,
/// which is also written to the report directory.
pub fn run_nightly(
    config: &PipelineConfig,
    store: &dyn StoreApi,
    sweep: &dyn SweepApi,
    target: &Target,
) -> Result<NightlyReport, PipelineError> {
    let started = chrono::Utc::now();
    let run_id = format!("nightly-{}-{}", started.format("%Y%m%dT%H%M%S"), &uuid::Uuid::new_v4().simple().to_string()[..8]);
    let mut report = NightlyReport {
        run_id: run_id.clone(),
        target: target.clone(),
        started_utc: now(),
        finished_utc: String::new(),
        steps: Vec::new(),
        stats: None,
        training_sequences: 0,
        folds: config.training.folds,
        round: None,
        best_before: None,
        best_after: None,
        evaluation: None,
        simulated_noise_sigma: config.sites.iter().map(|s| s.noise_sigma).fold(0.0, f64::max),
        reference_floor: config.training.reference_floor,
        aborted: None,
        report_path: None,
    };
    let outcome = steps(config, store, sweep, target, &mut report);
    if let Err(reason) = outcome {
        log::warn!("nightly run {run_id} aborted: {reason}");
        report.aborted = Some(reason);
    }
    let names = ["pull data and persist statistics", "train sweep round", "gate and evaluate"];
    for (i, name) in names.iter().enumerate().skip(report.steps.len()) {
        report.steps.push(StepOutcome {
            step: i as u8 + 1,
            name: name.to_string(),
            status: StepStatus::Skipped,
            detail: "not reached".into(),
        });
    }
    report.finished_utc = now();
    std::fs::create_dir_all(&config.report_dir)?;
    let path = config.report_dir.join(format!("{run_id}.json"));
    let json = serde_json::to_vec_pretty(&report).expect("report serializes");
    write_atomic(&path, &json)?;
    report.report_path = Some(path);
    Ok(report)
}

fn step(report: &mut NightlyReport, name: &str, status: StepStatus, detail: String) {
    let n = report.steps.len() as u8 + 1;
    report.steps.push(StepOutcome { step: n, name: name.to_string(), status, detail });
}

/// Runs the three steps, recording each; `Err` carries the abort reason.
fn steps(
    config: &PipelineConfig,
    store: &dyn StoreApi,
    sweep: &dyn SweepApi,
    target: &Target,
    report: &mut NightlyReport,
) -> Result<(), String> {
    const PULL: &str = "pull data and persist statistics";
    const SWEEP: &str = "train sweep round";
    const GATE: &str = "gate and evaluate";

    let pulled = (|| {
        let views = ensure_views(store, target)?;
        let stats = store.stats(&target_query(target), Some(&report.run_id))?;
        let data = load_sequences(store, &[&views.train, &views.validation])?;
        Ok::<_, PipelineError>((views, stats, data))
    })();
    let (views, stats, data) = match pulled {
        Ok(v) => v,
        Err(e) => {
            step(report, PULL, StepStatus::Aborted, e.to_string());
            return Err(e.to_string());
        }
    };
    step(
        report,
        PULL,
        StepStatus::Ok,
        format!(
            "{} trajectories, {} measurements per axis; statistics stored as {}",
            stats.total.trajectories, stats.total.measurements_per_axis, report.run_id
        ),
    );
    report.stats = Some(stats);
    report.training_sequences = data.len();
    if data.is_empty() {
        let reason = PipelineError::EmptyTrainingView(views.train.clone()).to_string();
        step(report, SWEEP, StepStatus::Aborted, reason.clone());
        return Err(reason);
    }

    let trained = (|| {
        report.best_before = sweep.best(target)?;
        let ordinal = sweep.overview()?.rounds.len() as u64;
        let mut spec = RoundSpec::new(target.clone(), Setup::EndToEnd, config.training.space.clone());
        spec.configs_per_round = config.training.configs_per_round;
        spec.seed = Some(config.seed.wrapping_add(ordinal));
        let view_id = format!("{}+{}", views.train, views.validation);
        run_round(sweep, spec, &RunMode::EndToEnd, &data, config.training.folds, &view_id, config.training.agents)
    })();
    let round = match trained {
        Ok(r) => r,
        Err(e) => {
            step(report, SWEEP, StepStatus::Aborted, e.to_string());
            return Err(e.to_string());
        }
    };
    step(
        report,
        SWEEP,
        StepStatus::Ok,
        format!("round {}: {} configurations trained, {} failed", round.round_id, round.runs.len(), round.failures.len()),
    );
    let accepted = round.runs.iter().filter(|r| r.accepted).count();
    let n_runs = round.runs.len();
    report.best_after = round.best.clone();
    report.round = Some(round);

    let evaluation = match &report.best_after {
        Some(best) => sweep.checkpoint(&best.checkpoint_id).map(|(_, eval)| eval),
        None => Ok(None),
    };
    let evaluation = match evaluation {
        Ok(e) => e,
        Err(e) => {
            step(report, GATE, StepStatus::Aborted, e.to_string());
            return Err(e.to_string());
        }
    };
    let best = report.best_after.as_ref().map_or("none".to_string(), |b| format!("{:.4}", b.cross_validation_loss));
    let eval = evaluation.as_ref().map_or("no evaluation data".to_string(), |e| format!("evaluation MAE {:.4} N m", e.mae));
    step(report, GATE, StepStatus::Ok, format!("{accepted} of {n_runs} reports accepted; best loss {best}; {eval}"));
    report.evaluation = evaluation;
    Ok(())
}
