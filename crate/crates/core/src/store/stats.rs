use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::record::TrajectoryRecord;

/// Summary of one scalar channel. All fields are zero when `count` is zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Accumulator {
    count: u64,
    min: f64,
    max: f64,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub(crate) fn push(&mut self, x: f64) {
        if self.count == 0 {
            self.min = x;
            self.max = x;
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub(crate) fn merge(&mut self, other: &Accumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }

    pub(crate) fn finish(&self) -> Moments {
        if self.count == 0 {
            return Moments::default();
        }
        Moments {
            count: self.count,
            min: self.min,
            max: self.max,
            mean: self.mean,
            std: (self.m2 / self.count as f64).max(0.0).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JointStats {
    pub q: Moments,
    pub qd: Moments,
    pub qdd: Moments,
    pub tau: Moments,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SiteStats {
    pub trajectories: u64,
    pub measurements_per_axis: u64,
    pub joints: Vec<JointStats>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetStats {
    pub sites: BTreeMap<String, SiteStats>,
    pub total: SiteStats,
}

#[derive(Debug, Clone, Default)]
struct SiteAccumulator {
    trajectories: u64,
    measurements: u64,
    joints: Vec<[Accumulator; 4]>,
}

impl SiteAccumulator {
    fn push(&mut self, record: &TrajectoryRecord) {
        self.trajectories += 1;
        self.measurements += record.samples.len() as u64;
        let n = record.n_joints();
        if self.joints.len() < n {
            self.joints.resize(n, [Accumulator::default(); 4]);
        }
        for s in &record.samples {
            for j in 0..n {
                let acc = &mut self.joints[j];
                acc[0].push(s.q[j]);
                acc[1].push(s.qd[j]);
                acc[2].push(s.qdd[j]);
                acc[3].push(s.tau[j]);
            }
        }
    }

    fn merge(&mut self, other: &SiteAccumulator) {
        self.trajectories += other.trajectories;
        self.measurements += other.measurements;
        if self.joints.len() < other.joints.len() {
            self.joints.resize(other.joints.len(), [Accumulator::default(); 4]);
        }
        for (mine, theirs) in self.joints.iter_mut().zip(&other.joints) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                a.merge(b);
            }
        }
    }

    fn finish(&self) -> SiteStats {
        SiteStats {
            trajectories: self.trajectories,
            measurements_per_axis: self.measurements,
            joints: self
                .joints
                .iter()
                .map(|[q, qd, qdd, tau]| JointStats {
                    q: q.finish(),
                    qd: qd.finish(),
                    qdd: qdd.finish(),
                    tau: tau.finish(),
                })
                .collect(),
        }
    }
}

/// Per-site and total statistics over `records`. Totals are obtained by
/// merging the per-site accumulators.
pub fn compute_stats<'a, I: IntoIterator<Item = &'a TrajectoryRecord>>(records: I) -> DatasetStats {
    let mut sites: BTreeMap<String, SiteAccumulator> = BTreeMap::new();
    for r in records {
        sites.entry(r.site.clone()).or_default().push(r);
    }
    let mut total = SiteAccumulator::default();
    for acc in sites.values() {
        total.merge(acc);
    }
    DatasetStats {
        sites: sites.into_iter().map(|(k, v)| (k, v.finish())).collect(),
        total: total.finish(),
    }
}
