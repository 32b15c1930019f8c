use std::time::Instant;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{PipelineError, StoreApi, SweepApi};
use crate::learner::{
    finetune, init_model, layer_groups, train, HyperParams, LabeledSequence, ModelCheckpoint, Network,
};
use crate::store::ProjectedRecord;
use crate::sweep::{BestModel, RoundSpec, RoundStatus};

/// How agents turn a configuration into a model.
#[derive(Debug, Clone)]
pub enum RunMode {
    /// Random initialization, every layer trained.
    EndToEnd,
    /// Adapt the trailing `unfrozen_layers` groups of `parent`.
    FineTune { parent: Box<ModelCheckpoint> },
}

/// One configuration trained by one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRun {
    pub config_id: String,
    pub agent_id: String,
    pub params: HyperParams,
    /// Seconds spent inside the train or fine-tune call.
    pub wall_time_s: f64,
    pub cross_validation_loss: f64,
    /// Held-out MAE after every epoch, averaged over folds.
    pub validation_mae: Vec<f64>,
    pub accepted: bool,
    pub checkpoint_id: String,
    pub layer_groups: usize,
    /// Groups whose weights are bit-identical to the starting model.
    pub unchanged_groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round_id: String,
    pub runs: Vec<AgentRun>,
    /// Configurations whose training failed, with the reason.
    pub failures: Vec<(String, String)>,
    pub status: RoundStatus,
    pub best: Option<BestModel>,
}

/// Converts projected view rows into training sequences. Rows must carry
/// the record id, purpose and all four sample fields.
pub fn sequences_from_view(rows: &[ProjectedRecord]) -> Result<Vec<LabeledSequence>, PipelineError> {
    rows.iter()
        .map(|row| {
            let id = row.record_id.clone().unwrap_or_default();
            let missing = |what: &str| PipelineError::InsufficientData(format!("view row {id} lacks {what}"));
            let samples = row.samples.as_ref().ok_or_else(|| missing("samples"))?;
            let n = samples.first().and_then(|s| s.q.as_ref()).map_or(0, Vec::len);
            let mut features = Vec::with_capacity(samples.len() * 3 * n);
            let mut targets = Vec::with_capacity(samples.len() * n);
            for s in samples {
                for part in [&s.q, &s.qd, &s.qdd] {
                    features.extend_from_slice(part.as_ref().ok_or_else(|| missing("q, qd and qdd"))?);
                }
                targets.extend_from_slice(s.tau.as_ref().ok_or_else(|| missing("tau"))?);
            }
            Ok(LabeledSequence { id, purpose: row.purpose, n_joints: n, features, targets })
        })
        .collect()
}

/// Count of layer groups (recurrent layers, then the readout) left
/// bit-identical.
fn unchanged_groups(before: &Network, after: &Network) -> usize {
    let layers = before
        .layers
        .iter()
        .zip(&after.layers)
        .filter(|(a, b)| a.w == b.w && a.b == b.b)
        .count();
    layers + usize::from(before.readout.w == after.readout.w && before.readout.b == after.readout.b)
}

fn mean_trace(outcome: &crate::learner::TrainOutcome) -> Vec<f64> {
    let epochs = outcome.folds.iter().map(|f| f.validation_mae.len()).min().unwrap_or(0);
    (0..epochs)
        .map(|e| outcome.folds.iter().map(|f| f.validation_mae[e]).sum::<f64>() / outcome.folds.len() as f64)
        .collect()
}

fn train_one(
    mode: &RunMode,
    hp: &HyperParams,
    data: &[LabeledSequence],
    folds: usize,
    view_id: &str,
) -> Result<(crate::learner::TrainOutcome, f64, ModelCheckpoint), PipelineError> {
    let n_joints = data.first().map_or(0, |s| s.n_joints);
    Ok(match mode {
        RunMode::EndToEnd => {
            let start = init_model(hp, n_joints)?;
            let t0 = Instant::now();
            let outcome = train(&start, data, hp, folds, view_id)?;
            (outcome, t0.elapsed().as_secs_f64(), start)
        }
        RunMode::FineTune { parent } => {
            let t0 = Instant::now();
            let outcome = finetune(parent, data, hp, folds, view_id)?;
            (outcome, t0.elapsed().as_secs_f64(), (**parent).clone())
        }
    })
}

/// Opens a round and lets `agents` local agents train its configurations
/// until the coordinator runs dry, then closes it. Each agent reports its
/// cross-validation loss and checkpoint; the coordinator gates.
pub fn run_round(
    sweep: &dyn SweepApi,
    spec: RoundSpec,
    mode: &RunMode,
    data: &[LabeledSequence],
    folds: usize,
    view_id: &str,
    agents: usize,
) -> Result<RoundOutcome, PipelineError> {
    let target = spec.target.clone();
    let round_id = sweep.open_round(spec)?;
    let runs = Mutex::new(Vec::new());
    let failures = Mutex::new(Vec::new());
    let fatal = Mutex::new(None);
    std::thread::scope(|scope| {
        for a in 0..agents.max(1) {
            let (round_id, runs, failures, fatal) = (&round_id, &runs, &failures, &fatal);
            scope.spawn(move || {
                let agent_id = format!("agent-{a}");
                loop {
                    let (config_id, hp) = match sweep.request_config(round_id, &agent_id) {
                        Ok(Some(c)) => c,
                        Ok(None) => break,
                        Err(e) => {
                            *fatal.lock() = Some(PipelineError::from(e));
                            break;
                        }
                    };
                    let (outcome, wall, start) = match train_one(mode, &hp, data, folds, view_id) {
                        Ok(r) => r,
                        Err(e) => {
                            log::warn!("{config_id}: training failed: {e}");
                            failures.lock().push((config_id, e.to_string()));
                            continue;
                        }
                    };
                    let unchanged = unchanged_groups(&start.network, &outcome.checkpoint.network);
                    let groups = layer_groups(&outcome.checkpoint);
                    let checkpoint_id = outcome.checkpoint.checkpoint_id.clone();
                    let loss = outcome.cross_validation_loss;
                    let trace = mean_trace(&outcome);
                    match sweep.report(round_id, &config_id, outcome.checkpoint, loss) {
                        Ok(ack) => {
                            log::info!(
                                "{config_id}: cv loss {loss:.4} in {wall:.2}s, {}",
                                if ack.accepted { "accepted" } else { "rejected" }
                            );
                            runs.lock().push(AgentRun {
                                config_id,
                                agent_id: agent_id.clone(),
                                params: hp,
                                wall_time_s: wall,
                                cross_validation_loss: loss,
                                validation_mae: trace,
                                accepted: ack.accepted,
                                checkpoint_id,
                                layer_groups: groups,
                                unchanged_groups: unchanged,
                            });
                        }
                        Err(e) => failures.lock().push((config_id, e.to_string())),
                    }
                }
            });
        }
    });
    let status = sweep.close_round(&round_id)?;
    if let Some(e) = fatal.into_inner() {
        return Err(e);
    }
    let mut runs = runs.into_inner();
    runs.sort_by(|a, b| a.config_id.cmp(&b.config_id));
    let mut failures = failures.into_inner();
    failures.sort();
    Ok(RoundOutcome { round_id, runs, failures, status, best: sweep.best(&target)? })
}

/// Training and validation rows of the given views, merged.
pub(crate) fn load_sequences(store: &dyn StoreApi, view_ids: &[&str]) -> Result<Vec<LabeledSequence>, PipelineError> {
    let mut out = Vec::new();
    for id in view_ids {
        out.extend(sequences_from_view(&store.resolve_view(id)?)?);
    }
    Ok(out)
}
