use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{record_from_value, DatasetQuery, RobotTypeInfo, ShadowStore, ShadowView, StoreError};
use crate::wire::WireError;

/// One store request, tagged by `verb`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verb", rename_all = "snake_case", deny_unknown_fields)]
pub enum StoreRequest {
    /// `record` is checked field by field so schema errors name the field.
    Ingest { record: Value },
    IngestBatch { records: Vec<Value> },
    Query {
        #[serde(default)]
        query: DatasetQuery,
    },
    Count {
        #[serde(default)]
        query: DatasetQuery,
    },
    /// With `run_id` the statistics are also persisted under that name.
    Stats {
        #[serde(default)]
        query: DatasetQuery,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        run_id: Option<String>,
    },
    Histogram {
        #[serde(default)]
        query: DatasetQuery,
        joint_index: usize,
        n_bins: usize,
    },
    RegisterRobotType { robot_type: RobotTypeInfo },
    CreateView { view: ShadowView },
    GetView { view_id: String },
    ListViews,
    ResolveView { view_id: String },
    ViewRecords { view_id: String },
    GetStatsReport { run_id: String },
}

const VERBS: [&str; 13] = [
    "ingest",
    "ingest_batch",
    "query",
    "count",
    "stats",
    "histogram",
    "register_robot_type",
    "create_view",
    "get_view",
    "list_views",
    "resolve_view",
    "view_records",
    "get_stats_report",
];

/// Reply envelope: `ok` with `result`, or not `ok` with `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreResponse {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<WireError>,
}

impl StoreResponse {
    pub fn success(result: Value) -> Self {
        Self { ok: true, result: Some(result), error: None }
    }

    pub fn failure(code: &str, message: impl Into<String>) -> Self {
        Self { ok: false, result: None, error: Some(WireError::new(code, message)) }
    }

    /// The result payload decoded as `T`, or the relayed error.
    pub fn into_result<T: serde::de::DeserializeOwned>(self) -> Result<T, StoreError> {
        if !self.ok {
            let e = self.error.unwrap_or_else(|| WireError::new("error", "error reply"));
            return Err(StoreError::Remote { code: e.code, message: e.message });
        }
        serde_json::from_value(self.result.unwrap_or(Value::Null))
            .map_err(|e| StoreError::Remote { code: "malformed_response".into(), message: e.to_string() })
    }
}

impl From<&StoreError> for WireError {
    fn from(e: &StoreError) -> Self {
        WireError::new(e.code(), e.to_string())
    }
}

fn to_value<T: Serialize>(v: T) -> Result<Value, StoreError> {
    serde_json::to_value(v).map_err(|e| StoreError::Io(e.to_string()))
}

/// Decodes and serves one raw request. Malformed requests get an error reply.
pub fn handle_store_value(store: &ShadowStore, value: Value) -> StoreResponse {
    let verb = value.get("verb").and_then(Value::as_str).map(str::to_string);
    match verb.as_deref() {
        None => return StoreResponse::failure("malformed_request", "request needs a string `verb`"),
        Some(v) if !VERBS.contains(&v) => return StoreResponse::failure("unknown_verb", format!("unknown verb `{v}`")),
        Some(_) => {}
    }
    match serde_json::from_value::<StoreRequest>(value) {
        Ok(req) => handle_store_request(store, req),
        Err(e) => StoreResponse::failure("malformed_request", e.to_string()),
    }
}

pub fn handle_store_request(store: &ShadowStore, req: StoreRequest) -> StoreResponse {
    match serve(store, req) {
        Ok(v) => StoreResponse::success(v),
        Err(e) => {
            log::debug!("store request failed: {e}");
            StoreResponse { ok: false, result: None, error: Some(WireError::from(&e)) }
        }
    }
}

fn serve(store: &ShadowStore, req: StoreRequest) -> Result<Value, StoreError> {
    match req {
        StoreRequest::Ingest { record } => Ok(json!({ "record_id": store.ingest(record_from_value(record)?)? })),
        StoreRequest::IngestBatch { records } => {
            let records = records.into_iter().map(record_from_value).collect::<Result<Vec<_>, _>>()?;
            Ok(json!({ "record_ids": store.ingest_batch(records)? }))
        }
        StoreRequest::Query { query } => to_value(store.query(&query)?),
        StoreRequest::Count { query } => Ok(json!({ "count": store.query(&query)?.len() })),
        StoreRequest::Stats { query, run_id } => {
            let stats = store.stats(&query)?;
            if let Some(run_id) = run_id {
                store.put_stats_report(&run_id, &stats)?;
            }
            to_value(stats)
        }
        StoreRequest::Histogram { query, joint_index, n_bins } => to_value(store.histogram(&query, joint_index, n_bins)?),
        StoreRequest::RegisterRobotType { robot_type } => {
            store.register_robot_type(robot_type)?;
            Ok(Value::Null)
        }
        StoreRequest::CreateView { view } => Ok(json!({ "view_id": store.create_view(view)? })),
        StoreRequest::GetView { view_id } => to_value(store.view(&view_id)?),
        StoreRequest::ListViews => to_value(store.views()),
        StoreRequest::ResolveView { view_id } => to_value(store.resolve_view(&view_id)?),
        StoreRequest::ViewRecords { view_id } => to_value(store.view_records(&view_id)?),
        StoreRequest::GetStatsReport { run_id } => to_value(store.get_stats_report(&run_id)?),
    }
}
