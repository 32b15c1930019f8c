use serde::{Deserialize, Serialize};

use super::query::DatasetQuery;
use super::record::{Purpose, TrajectoryRecord};
use super::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    RecordId,
    RobotType,
    InstanceId,
    Site,
    Purpose,
    VelocityScaling,
    AccelerationScaling,
    SoftwareCommit,
    CreatedUtc,
    Dt,
    Q,
    Qd,
    Qdd,
    Tau,
}

impl Field {
    pub fn is_sample_field(self) -> bool {
        matches!(self, Field::Q | Field::Qd | Field::Qdd | Field::Tau)
    }
}

/// Named, persisted query plus projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowView {
    pub view_id: String,
    pub query: DatasetQuery,
    pub projection: Vec<Field>,
    /// Assigned by the store when empty.
    #[serde(default)]
    pub created_utc: String,
    #[serde(default)]
    pub description: String,
}

impl ShadowView {
    pub fn new(view_id: impl Into<String>, query: DatasetQuery, projection: Vec<Field>) -> Self {
        Self {
            view_id: view_id.into(),
            query,
            projection,
            created_utc: String::new(),
            description: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if self.view_id.trim().is_empty() {
            return Err(StoreError::schema("view_id", "must not be empty"));
        }
        if self.projection.is_empty() {
            return Err(StoreError::EmptyProjection);
        }
        self.query.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProjectedSample {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qd: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qdd: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProjectedRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose: Option<Purpose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity_scaling: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceleration_scaling: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub software_commit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_utc: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<ProjectedSample>>,
}

pub fn project(record: &TrajectoryRecord, projection: &[Field]) -> ProjectedRecord {
    let has = |f: Field| projection.contains(&f);
    let pick = |f: Field, v: &Vec<f64>| has(f).then(|| v.clone());
    let samples = projection.iter().any(|f| f.is_sample_field()).then(|| {
        record
            .samples
            .iter()
            .map(|s| ProjectedSample {
                q: pick(Field::Q, &s.q),
                qd: pick(Field::Qd, &s.qd),
                qdd: pick(Field::Qdd, &s.qdd),
                tau: pick(Field::Tau, &s.tau),
            })
            .collect()
    });
    ProjectedRecord {
        record_id: has(Field::RecordId).then(|| record.record_id.clone()),
        robot_type: has(Field::RobotType).then(|| record.robot_type.clone()),
        instance_id: has(Field::InstanceId).then(|| record.instance_id.clone()),
        site: has(Field::Site).then(|| record.site.clone()),
        purpose: has(Field::Purpose).then_some(record.purpose),
        velocity_scaling: has(Field::VelocityScaling).then_some(record.velocity_scaling),
        acceleration_scaling: has(Field::AccelerationScaling).then_some(record.acceleration_scaling),
        software_commit: has(Field::SoftwareCommit).then(|| record.software_commit.clone()),
        created_utc: has(Field::CreatedUtc).then(|| record.created_utc.clone()),
        dt: has(Field::Dt).then_some(record.dt),
        samples,
    }
}
