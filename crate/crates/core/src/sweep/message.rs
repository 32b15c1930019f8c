use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::coordinator::{BestModel, Coordinator, HistoryEntry, RoundSpec, RoundStatus, SweepOverview, Target};
use super::SweepError;
use crate::learner::{EvalReport, HyperParams, ModelCheckpoint};
use crate::wire::WireError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageType {
    #[default]
    RequestConfig,
    Config,
    Report,
    Ack,
    RoundDone,
    OpenRound,
    RoundOpened,
    CloseRound,
    Status,
    Best,
    FetchCheckpoint,
    Checkpoint,
    History,
    Error,
}

impl MessageType {
    const NAMES: [(&'static str, MessageType); 14] = [
        ("request_config", MessageType::RequestConfig),
        ("config", MessageType::Config),
        ("report", MessageType::Report),
        ("ack", MessageType::Ack),
        ("round_done", MessageType::RoundDone),
        ("open_round", MessageType::OpenRound),
        ("round_opened", MessageType::RoundOpened),
        ("close_round", MessageType::CloseRound),
        ("status", MessageType::Status),
        ("best", MessageType::Best),
        ("fetch_checkpoint", MessageType::FetchCheckpoint),
        ("checkpoint", MessageType::Checkpoint),
        ("history", MessageType::History),
        ("error", MessageType::Error),
    ];

    pub fn parse(s: &str) -> Option<Self> {
        Self::NAMES.iter().find(|(n, _)| *n == s).map(|(_, t)| *t)
    }
}

impl From<&SweepError> for WireError {
    fn from(e: &SweepError) -> Self {
        Self { code: e.code().to_string(), message: e.to_string() }
    }
}

impl From<WireError> for SweepError {
    fn from(e: WireError) -> Self {
        SweepError::Remote { code: e.code, message: e.message }
    }
}

/// One frame of the sweep protocol. Requests and replies share the shape;
/// `type` says which fields are meaningful.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepMessage {
    #[serde(rename = "type")]
    pub kind: MessageType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<HyperParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_validation_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<ModelCheckpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<RoundSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<RoundStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overview: Option<SweepOverview>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best: Option<BestModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<Vec<HistoryEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_report: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<WireError>,
}

impl SweepMessage {
    pub fn new(kind: MessageType) -> Self {
        Self { kind, ..Default::default() }
    }

    pub fn error(code: &str, message: impl Into<String>) -> Self {
        Self { error: Some(WireError::new(code, message)), ..Self::new(MessageType::Error) }
    }

    /// `Err` for error replies, so callers can use `?` on a response.
    pub fn into_result(self) -> Result<Self, SweepError> {
        match (self.kind, self.error.clone()) {
            (MessageType::Error, Some(e)) => Err(e.into()),
            (MessageType::Error, None) => Err(SweepError::Remote { code: "error".into(), message: "error reply".into() }),
            _ => Ok(self),
        }
    }
}

fn need<T>(field: Option<T>, name: &str) -> Result<T, SweepError> {
    field.ok_or_else(|| SweepError::InvalidRequest(format!("missing field `{name}`")))
}

/// Decodes and serves one raw frame. Malformed frames and unknown types get
/// an error reply rather than failing the connection.
pub fn handle_value(coord: &Coordinator, value: Value) -> SweepMessage {
    let kind = value.get("type").and_then(Value::as_str).map(str::to_string);
    match kind.as_deref().map(MessageType::parse) {
        None => return SweepMessage::error("malformed_message", "message needs a string `type`"),
        Some(None) => {
            return SweepMessage::error("unknown_type", format!("unknown message type `{}`", kind.unwrap_or_default()))
        }
        Some(Some(_)) => {}
    }
    match serde_json::from_value::<SweepMessage>(value) {
        Ok(msg) => handle_message(coord, msg),
        Err(e) => SweepMessage::error("malformed_message", e.to_string()),
    }
}

pub fn handle_message(coord: &Coordinator, msg: SweepMessage) -> SweepMessage {
    serve(coord, msg).unwrap_or_else(|e| {
        log::debug!("sweep request failed: {e}");
        SweepMessage { error: Some(WireError::from(&e)), ..SweepMessage::new(MessageType::Error) }
    })
}

fn serve(coord: &Coordinator, msg: SweepMessage) -> Result<SweepMessage, SweepError> {
    use MessageType as T;
    Ok(match msg.kind {
        T::RequestConfig => {
            let round_id = need(msg.round_id, "round_id")?;
            let agent_id = need(msg.agent_id, "agent_id")?;
            match coord.request_config(&round_id, &agent_id)? {
                Some(c) => SweepMessage {
                    round_id: Some(round_id),
                    agent_id: Some(c.agent_id),
                    config_id: Some(c.config_id),
                    params: Some(c.params),
                    ..SweepMessage::new(T::Config)
                },
                None => SweepMessage { round_id: Some(round_id), ..SweepMessage::new(T::RoundDone) },
            }
        }
        T::Report => {
            let round_id = need(msg.round_id, "round_id")?;
            let config_id = need(msg.config_id, "config_id")?;
            let checkpoint = need(msg.checkpoint, "checkpoint")?;
            let loss = need(msg.cross_validation_loss, "cross_validation_loss")?;
            let outcome = coord.report_result(&round_id, &config_id, &checkpoint, loss)?;
            SweepMessage {
                round_id: Some(round_id),
                config_id: Some(config_id),
                cross_validation_loss: Some(loss),
                accepted: Some(outcome.accepted),
                checkpoint_id: Some(checkpoint.checkpoint_id),
                best: Some(outcome.best),
                ..SweepMessage::new(T::Ack)
            }
        }
        T::OpenRound => {
            let round_id = coord.open_round(need(msg.round, "round")?)?;
            SweepMessage { round_id: Some(round_id), ..SweepMessage::new(T::RoundOpened) }
        }
        T::CloseRound => {
            let status = coord.close_round(&need(msg.round_id, "round_id")?)?;
            SweepMessage { round_id: Some(status.round_id.clone()), status: Some(status), ..SweepMessage::new(T::Status) }
        }
        T::Status => match msg.round_id {
            Some(round_id) => {
                let status = coord.status(&round_id)?;
                SweepMessage { round_id: Some(round_id), status: Some(status), ..SweepMessage::new(T::Status) }
            }
            None => SweepMessage { overview: Some(coord.overview()?), ..SweepMessage::new(T::Status) },
        },
        T::Best => {
            let target = need(msg.target, "target")?;
            SweepMessage { best: Some(coord.best(&target)?), target: Some(target), ..SweepMessage::new(T::Best) }
        }
        T::FetchCheckpoint => {
            let id = need(msg.checkpoint_id, "checkpoint_id")?;
            SweepMessage {
                checkpoint: Some(coord.checkpoint(&id)?),
                eval_report: coord.eval_report(&id)?,
                checkpoint_id: Some(id),
                ..SweepMessage::new(T::Checkpoint)
            }
        }
        T::History => {
            let target = need(msg.target, "target")?;
            SweepMessage { history: Some(coord.history(&target)), target: Some(target), ..SweepMessage::new(T::History) }
        }
        T::Config | T::Ack | T::RoundDone | T::RoundOpened | T::Checkpoint | T::Error => {
            return Err(SweepError::InvalidRequest(format!("`{}` is a reply type", type_name(msg.kind))))
        }
    })
}

fn type_name(kind: MessageType) -> &'static str {
    MessageType::NAMES.iter().find(|(_, t)| *t == kind).map_or("?", |(n, _)| n)
}
