use chrono::{DateTime, NaiveDateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::StoreError;
pub use crate::trajectory::Sample;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.3fZ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Train,
    Validation,
    Evaluation,
}

impl Purpose {
    pub const ALL: [Purpose; 3] = [Purpose::Train, Purpose::Validation, Purpose::Evaluation];

    pub fn as_str(self) -> &'static str {
        match self {
            Purpose::Train => "train",
            Purpose::Validation => "validation",
            Purpose::Evaluation => "evaluation",
        }
    }
}

impl std::fmt::Display for Purpose {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Purpose {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Purpose::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown purpose `{s}` (expected train, validation or evaluation)"))
    }
}

/// One annotated trajectory. Field order is the on-disk order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub record_id: String,
    pub robot_type: String,
    pub instance_id: String,
    pub site: String,
    pub purpose: Purpose,
    pub velocity_scaling: f64,
    pub acceleration_scaling: f64,
    pub software_commit: String,
    pub created_utc: String,
    pub dt: f64,
    pub samples: Vec<Sample>,
}

impl TrajectoryRecord {
    pub fn n_joints(&self) -> usize {
        self.samples.first().map_or(0, |s| s.q.len())
    }

    /// Checks every record invariant except store-level uniqueness.
    pub fn validate(&self) -> Result<(), StoreError> {
        uuid::Uuid::parse_str(&self.record_id)
            .map_err(|e| StoreError::schema("record_id", format!("not a UUID: {e}")))?;
        for (field, value) in [
            ("robot_type", &self.robot_type),
            ("instance_id", &self.instance_id),
            ("site", &self.site),
        ] {
            if value.trim().is_empty() {
                return Err(StoreError::schema(field, "must not be empty"));
            }
        }
        if self.site.contains(['/', '\\', '.']) {
            return Err(StoreError::schema("site", "must not contain path separators or dots"));
        }
        for (field, s) in [
            ("velocity_scaling", self.velocity_scaling),
            ("acceleration_scaling", self.acceleration_scaling),
        ] {
            if !(s > 0.0 && s <= 1.0) {
                return Err(StoreError::schema(field, format!("must lie in (0, 1], got {s}")));
            }
        }
        if self.software_commit.is_empty() || !self.software_commit.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(StoreError::schema("software_commit", "must be a non-empty hex string"));
        }
        parse_timestamp(&self.created_utc).map_err(|m| StoreError::schema("created_utc", m))?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(StoreError::schema("dt", format!("must be positive, got {}", self.dt)));
        }
        let Some(first) = self.samples.first() else {
            return Err(StoreError::schema("samples", "must not be empty"));
        };
        let n = first.q.len();
        if n == 0 {
            return Err(StoreError::schema("samples", "joint count must be positive"));
        }
        for (k, s) in self.samples.iter().enumerate() {
            for (name, v) in [("q", &s.q), ("qd", &s.qd), ("qdd", &s.qdd), ("tau", &s.tau)] {
                if v.len() != n {
                    return Err(StoreError::schema(
                        "samples",
                        format!("sample {k} field {name} has {} joints, expected {n}", v.len()),
                    ));
                }
                if !v.iter().all(|x| x.is_finite()) {
                    return Err(StoreError::schema("samples", format!("sample {k} field {name} is not finite")));
                }
            }
        }
        Ok(())
    }
}

pub fn now_timestamp() -> String {
    Utc::now().format(TIMESTAMP_FORMAT).to_string()
}

/// Parses a millisecond-precision UTC timestamp in the canonical form.
pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, String> {
    let naive = NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .map_err(|e| format!("`{s}` is not a UTC timestamp like 2024-01-31T02:00:00.000Z: {e}"))?;
    let parsed = naive.and_utc();
    if parsed.format(TIMESTAMP_FORMAT).to_string() != s {
        return Err(format!("`{s}` must carry exactly millisecond precision"));
    }
    Ok(parsed)
}

const RECORD_FIELDS: [&str; 11] = [
    "record_id",
    "robot_type",
    "instance_id",
    "site",
    "purpose",
    "velocity_scaling",
    "acceleration_scaling",
    "software_commit",
    "created_utc",
    "dt",
    "samples",
];

fn take<T: DeserializeOwned>(obj: &mut Map<String, Value>, field: &'static str) -> Result<T, StoreError> {
    let value = obj.remove(field).ok_or_else(|| StoreError::schema(field, "missing"))?;
    serde_json::from_value(value).map_err(|e| StoreError::schema(field, e.to_string()))
}

/// Builds a record from untrusted JSON, naming the offending field in every
/// error. A missing or null `record_id` / `created_utc` is filled in by the
/// store.
pub fn record_from_value(value: Value) -> Result<TrajectoryRecord, StoreError> {
    let Value::Object(mut obj) = value else {
        return Err(StoreError::schema("record", "expected a JSON object"));
    };
    if let Some(unknown) = obj.keys().find(|k| !RECORD_FIELDS.contains(&k.as_str())) {
        return Err(StoreError::schema(
            "record",
            format!("unknown field `{unknown}`"),
        ));
    }
    let optional = |obj: &mut Map<String, Value>, field: &'static str| -> Result<String, StoreError> {
        match obj.remove(field) {
            None | Some(Value::Null) => Ok(String::new()),
            Some(Value::String(s)) => Ok(s),
            Some(other) => Err(StoreError::schema(field, format!("expected a string, got {other}"))),
        }
    };
    let record_id = optional(&mut obj, "record_id")?;
    let created_utc = optional(&mut obj, "created_utc")?;
    Ok(TrajectoryRecord {
        record_id,
        robot_type: take(&mut obj, "robot_type")?,
        instance_id: take(&mut obj, "instance_id")?,
        site: take(&mut obj, "site")?,
        purpose: take(&mut obj, "purpose")?,
        velocity_scaling: take(&mut obj, "velocity_scaling")?,
        acceleration_scaling: take(&mut obj, "acceleration_scaling")?,
        software_commit: take(&mut obj, "software_commit")?,
        created_utc,
        dt: take(&mut obj, "dt")?,
        samples: take(&mut obj, "samples")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn raw() -> Value {
        json!({
            "robot_type": "arm7",
            "instance_id": "a",
            "site": "north",
            "purpose": "train",
            "velocity_scaling": 0.5,
            "acceleration_scaling": 0.5,
            "software_commit": "abc123",
            "dt": 0.01,
            "samples": [{"q": [0.0], "qd": [0.0], "qdd": [0.0], "tau": [1.0]}]
        })
    }

    #[test]
    fn purpose_violation_names_the_field() {
        let mut v = raw();
        v["purpose"] = json!("test");
        let err = record_from_value(v).unwrap_err();
        assert_eq!(err.code(), "schema");
        assert!(err.to_string().contains("purpose"), "{err}");
    }

    #[test]
    fn missing_ids_are_left_for_the_store() {
        let rec = record_from_value(raw()).unwrap();
        assert!(rec.record_id.is_empty() && rec.created_utc.is_empty());
    }

    #[test]
    fn ragged_samples_rejected() {
        let mut rec = record_from_value(raw()).unwrap();
        rec.record_id = uuid::Uuid::new_v4().to_string();
        rec.created_utc = now_timestamp();
        rec.validate().unwrap();
        rec.samples[0].tau.push(0.0);
        assert!(rec.validate().unwrap_err().to_string().contains("samples"));
    }

    #[test]
    fn timestamp_precision_is_enforced() {
        assert!(parse_timestamp("2024-05-01T02:00:00.000Z").is_ok());
        assert!(parse_timestamp("2024-05-01T02:00:00Z").is_err());
        assert!(parse_timestamp("2024-05-01T02:00:00.123456Z").is_err());
    }
}
