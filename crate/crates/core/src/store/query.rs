use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::record::{parse_timestamp, Purpose, TrajectoryRecord};
use super::StoreError;

/// Closed interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.min <= v && v <= self.max
    }
}

/// Closed creation-time interval; either end may be open.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TimeRange {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<String>,
}

/// Conjunction of optional filters. Absent filters and empty sets match
/// everything.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetQuery {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_type: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub instance_ids: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub sites: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose: Option<Purpose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity_scaling: Option<Range>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceleration_scaling: Option<Range>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created: Option<TimeRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

impl DatasetQuery {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn purpose(purpose: Purpose) -> Self {
        Self { purpose: Some(purpose), ..Self::default() }
    }

    pub fn with_instances<I: IntoIterator<Item = S>, S: Into<String>>(mut self, ids: I) -> Self {
        self.instance_ids = ids.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_sites<I: IntoIterator<Item = S>, S: Into<String>>(mut self, sites: I) -> Self {
        self.sites = sites.into_iter().map(Into::into).collect();
        self
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        for (name, range) in [
            ("velocity_scaling", &self.velocity_scaling),
            ("acceleration_scaling", &self.acceleration_scaling),
        ] {
            if let Some(r) = range {
                if !(r.min.is_finite() && r.max.is_finite()) || r.min > r.max {
                    return Err(StoreError::MalformedRange(format!(
                        "{name}: [{}, {}] is not a finite, ordered interval",
                        r.min, r.max
                    )));
                }
            }
        }
        if let Some(created) = &self.created {
            let parse = |s: &Option<String>| {
                s.as_deref()
                    .map(parse_timestamp)
                    .transpose()
                    .map_err(|m| StoreError::MalformedRange(format!("created: {m}")))
            };
            if let (Some(from), Some(to)) = (parse(&created.from)?, parse(&created.to)?) {
                if from > to {
                    return Err(StoreError::MalformedRange(format!(
                        "created: {} is after {}",
                        created.from.as_deref().unwrap_or_default(),
                        created.to.as_deref().unwrap_or_default()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Predicate part of the query (everything but `limit`). Assumes the
    /// query has been validated; canonical timestamps compare lexically.
    pub fn matches(&self, r: &TrajectoryRecord) -> bool {
        self.robot_type.as_ref().is_none_or(|t| *t == r.robot_type)
            && (self.instance_ids.is_empty() || self.instance_ids.contains(&r.instance_id))
            && (self.sites.is_empty() || self.sites.contains(&r.site))
            && self.purpose.is_none_or(|p| p == r.purpose)
            && self.velocity_scaling.is_none_or(|rg| rg.contains(r.velocity_scaling))
            && self.acceleration_scaling.is_none_or(|rg| rg.contains(r.acceleration_scaling))
            && self.created.as_ref().is_none_or(|c| {
                c.from.as_ref().is_none_or(|f| r.created_utc >= *f)
                    && c.to.as_ref().is_none_or(|t| r.created_utc <= *t)
            })
    }
}
