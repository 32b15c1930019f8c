use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::learner::{evaluate, EvalReport, HyperParams, LabeledSequence, ModelCheckpoint, DEFAULT_SENSOR_FLOOR};
use crate::store::{
    DatasetQuery, DatasetStats, Histogram, ProjectedRecord, Purpose, RobotTypeInfo, ShadowStore, ShadowView,
    StoreError, StoreRequest, StoreResponse, TrajectoryRecord,
};
use crate::sweep::{
    handle_message, BestModel, Coordinator, EvalHook, HistoryEntry, MessageType, ReportOutcome, RoundSpec,
    RoundStatus, SweepError, SweepMessage, SweepOverview, Target,
};

fn encode<T: Serialize>(v: &T) -> Result<Value, StoreError> {
    serde_json::to_value(v).map_err(|e| StoreError::Io(e.to_string()))
}

fn field<T: DeserializeOwned>(mut v: Value, name: &str) -> Result<T, StoreError> {
    serde_json::from_value(v[name].take())
        .map_err(|e| StoreError::Remote { code: "malformed_response".into(), message: format!("{name}: {e}") })
}

/// Shadow store operations. Implementors only provide [`StoreApi::call`];
/// the typed methods encode requests and decode replies.
pub trait StoreApi: Send + Sync {
    fn call(&self, request: StoreRequest) -> StoreResponse;

    fn ingest_batch(&self, records: Vec<TrajectoryRecord>) -> Result<Vec<String>, StoreError> {
        let records = records.iter().map(encode).collect::<Result<_, _>>()?;
        let v: Value = self.call(StoreRequest::IngestBatch { records }).into_result()?;
        field(v, "record_ids")
    }

    fn query(&self, query: &DatasetQuery) -> Result<Vec<TrajectoryRecord>, StoreError> {
        self.call(StoreRequest::Query { query: query.clone() }).into_result()
    }

    fn count(&self, query: &DatasetQuery) -> Result<usize, StoreError> {
        let v: Value = self.call(StoreRequest::Count { query: query.clone() }).into_result()?;
        field(v, "count")
    }

    fn stats(&self, query: &DatasetQuery, run_id: Option<&str>) -> Result<DatasetStats, StoreError> {
        self.call(StoreRequest::Stats { query: query.clone(), run_id: run_id.map(str::to_string) }).into_result()
    }

    fn stats_report(&self, run_id: &str) -> Result<DatasetStats, StoreError> {
        self.call(StoreRequest::GetStatsReport { run_id: run_id.to_string() }).into_result()
    }

    fn histogram(&self, query: &DatasetQuery, joint_index: usize, n_bins: usize) -> Result<Histogram, StoreError> {
        self.call(StoreRequest::Histogram { query: query.clone(), joint_index, n_bins }).into_result()
    }

    fn register_robot_type(&self, robot_type: RobotTypeInfo) -> Result<(), StoreError> {
        self.call(StoreRequest::RegisterRobotType { robot_type }).into_result::<Value>().map(drop)
    }

    fn create_view(&self, view: ShadowView) -> Result<String, StoreError> {
        let v: Value = self.call(StoreRequest::CreateView { view }).into_result()?;
        field(v, "view_id")
    }

    /// Creates `view` unless a view with its id exists already.
    fn ensure_view(&self, view: ShadowView) -> Result<String, StoreError> {
        let id = view.view_id.clone();
        match self.create_view(view) {
            Err(e) if e.code() == "duplicate_view" => Ok(id),
            other => other,
        }
    }

    fn views(&self) -> Result<Vec<ShadowView>, StoreError> {
        self.call(StoreRequest::ListViews).into_result()
    }

    fn resolve_view(&self, view_id: &str) -> Result<Vec<ProjectedRecord>, StoreError> {
        self.call(StoreRequest::ResolveView { view_id: view_id.to_string() }).into_result()
    }
}

/// Sweep coordinator operations over [`SweepApi::call`].
pub trait SweepApi: Send + Sync {
    fn call(&self, message: SweepMessage) -> SweepMessage;

    fn open_round(&self, spec: RoundSpec) -> Result<String, SweepError> {
        let reply = self.call(SweepMessage { round: Some(spec), ..SweepMessage::new(MessageType::OpenRound) });
        need(reply.into_result()?.round_id, "round_id")
    }

    /// The next configuration for `agent_id`, or `None` once the round is
    /// exhausted or closed.
    fn request_config(&self, round_id: &str, agent_id: &str) -> Result<Option<(String, HyperParams)>, SweepError> {
        let reply = self
            .call(SweepMessage {
                round_id: Some(round_id.to_string()),
                agent_id: Some(agent_id.to_string()),
                ..SweepMessage::new(MessageType::RequestConfig)
            })
            .into_result()?;
        match reply.kind {
            MessageType::RoundDone => Ok(None),
            _ => Ok(Some((need(reply.config_id, "config_id")?, need(reply.params, "params")?))),
        }
    }

    fn report(
        &self,
        round_id: &str,
        config_id: &str,
        checkpoint: ModelCheckpoint,
        cross_validation_loss: f64,
    ) -> Result<ReportOutcome, SweepError> {
        let reply = self
            .call(SweepMessage {
                round_id: Some(round_id.to_string()),
                config_id: Some(config_id.to_string()),
                checkpoint: Some(checkpoint),
                cross_validation_loss: Some(cross_validation_loss),
                ..SweepMessage::new(MessageType::Report)
            })
            .into_result()?;
        Ok(ReportOutcome { accepted: need(reply.accepted, "accepted")?, best: need(reply.best, "best")? })
    }

    fn close_round(&self, round_id: &str) -> Result<RoundStatus, SweepError> {
        let reply = self.call(SweepMessage { round_id: Some(round_id.to_string()), ..SweepMessage::new(MessageType::CloseRound) });
        need(reply.into_result()?.status, "status")
    }

    fn status(&self, round_id: &str) -> Result<RoundStatus, SweepError> {
        let reply = self.call(SweepMessage { round_id: Some(round_id.to_string()), ..SweepMessage::new(MessageType::Status) });
        need(reply.into_result()?.status, "status")
    }

    fn overview(&self) -> Result<SweepOverview, SweepError> {
        need(self.call(SweepMessage::new(MessageType::Status)).into_result()?.overview, "overview")
    }

    /// Repository best for `target`, `None` before the first acceptance.
    fn best(&self, target: &Target) -> Result<Option<BestModel>, SweepError> {
        let reply = self.call(SweepMessage { target: Some(target.clone()), ..SweepMessage::new(MessageType::Best) });
        match reply.into_result() {
            Ok(m) => Ok(Some(need(m.best, "best")?)),
            Err(e) if e.code() == "no_model" => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn checkpoint(&self, checkpoint_id: &str) -> Result<(ModelCheckpoint, Option<EvalReport>), SweepError> {
        let reply = self
            .call(SweepMessage {
                checkpoint_id: Some(checkpoint_id.to_string()),
                ..SweepMessage::new(MessageType::FetchCheckpoint)
            })
            .into_result()?;
        Ok((need(reply.checkpoint, "checkpoint")?, reply.eval_report))
    }

    fn history(&self, target: &Target) -> Result<Vec<HistoryEntry>, SweepError> {
        let reply = self.call(SweepMessage { target: Some(target.clone()), ..SweepMessage::new(MessageType::History) });
        need(reply.into_result()?.history, "history")
    }
}

fn need<T>(v: Option<T>, name: &str) -> Result<T, SweepError> {
    v.ok_or_else(|| SweepError::Remote { code: "malformed_response".into(), message: format!("reply lacks `{name}`") })
}

/// In-process store. Bulk record transfers skip the JSON round trip.
#[derive(Clone)]
pub struct LocalStore(pub Arc<ShadowStore>);

impl StoreApi for LocalStore {
    fn call(&self, request: StoreRequest) -> StoreResponse {
        crate::store::handle_store_request(&self.0, request)
    }

    fn ingest_batch(&self, records: Vec<TrajectoryRecord>) -> Result<Vec<String>, StoreError> {
        self.0.ingest_batch(records)
    }

    fn query(&self, query: &DatasetQuery) -> Result<Vec<TrajectoryRecord>, StoreError> {
        self.0.query(query)
    }

    fn resolve_view(&self, view_id: &str) -> Result<Vec<ProjectedRecord>, StoreError> {
        self.0.resolve_view(view_id)
    }
}

#[derive(Clone)]
pub struct LocalSweep(pub Arc<Coordinator>);

impl SweepApi for LocalSweep {
    fn call(&self, message: SweepMessage) -> SweepMessage {
        handle_message(&self.0, message)
    }
}

/// Post-acceptance evaluation against the store's evaluation records: all
/// of them for the foundation target, the instance's own for an instance
/// target. Returns `None` (and logs) when there is nothing to score.
pub fn evaluation_hook(store: Arc<ShadowStore>) -> EvalHook {
    Arc::new(move |target: &Target, ckpt: &ModelCheckpoint| {
        let mut query = DatasetQuery::purpose(Purpose::Evaluation);
        if let Target::Instance(id) = target {
            query = query.with_instances([id.clone()]);
        }
        let records = match store.query(&query) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("evaluation query for {target} failed: {e}");
                return None;
            }
        };
        let records: Vec<_> = records.into_iter().filter(|r| r.n_joints() == ckpt.n_joints).collect();
        let Some(first) = records.first() else {
            log::info!("no evaluation records for {target}; skipping evaluation");
            return None;
        };
        let tau_max = match store.robot_type(&first.robot_type) {
            Some(info) if info.tau_max.len() == ckpt.n_joints => info.tau_max,
            _ => {
                log::warn!("robot type {} has no torque limits; skipping evaluation", first.robot_type);
                return None;
            }
        };
        let data: Vec<LabeledSequence> = records
            .iter()
            .filter(|r| r.robot_type == first.robot_type)
            .map(LabeledSequence::from_record)
            .collect();
        match evaluate(ckpt, &data, &tau_max, DEFAULT_SENSOR_FLOOR) {
            Ok(report) => Some(report),
            Err(e) => {
                log::warn!("evaluation of {} failed: {e}", ckpt.checkpoint_id);
                None
            }
        }
    })
}
