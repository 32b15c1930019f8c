use std::collections::BTreeSet;

use d2k_core::store::{
    DatasetQuery, Field, Purpose, Range, RobotTypeInfo, Sample, ShadowStore, ShadowView, TimeRange,
    TrajectoryRecord,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const SITES: [&str; 3] = ["north", "east", "west"];
const INSTANCES: [&str; 4] = ["r1", "r2", "r3", "r4"];

fn sample(q: f64, tau: f64) -> Sample {
    Sample { q: vec![q, -q], qd: vec![0.1, 0.2], qdd: vec![0.0, 0.0], tau: vec![tau, tau] }
}

fn record(site: &str, instance: &str, purpose: Purpose, n: usize) -> TrajectoryRecord {
    TrajectoryRecord {
        record_id: String::new(),
        robot_type: "arm2".into(),
        instance_id: instance.into(),
        site: site.into(),
        purpose,
        velocity_scaling: 0.5,
        acceleration_scaling: 0.5,
        software_commit: "0a1b2c".into(),
        created_utc: String::new(),
        dt: 0.01,
        samples: (0..n).map(|k| sample(k as f64 * 0.01, 1.0)).collect(),
    }
}

fn arm2() -> RobotTypeInfo {
    RobotTypeInfo { name: "arm2".into(), n_joints: 2, q_min: vec![-1.0, -1.0], q_max: vec![1.0, 1.0], tau_max: vec![] }
}

/// Corpus with explicit ids and timestamps so ties and ordering are exercised.
fn corpus(seed: u64, n: usize) -> Vec<TrajectoryRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut r = record(
                SITES[rng.random_range(0..3)],
                INSTANCES[rng.random_range(0..4)],
                Purpose::ALL[rng.random_range(0..3)],
                rng.random_range(1..6),
            );
            r.record_id = uuid::Builder::from_random_bytes(rng.random()).into_uuid().to_string();
            r.velocity_scaling = (rng.random_range(1..=20) as f64) * 0.05;
            r.acceleration_scaling = (rng.random_range(1..=20) as f64) * 0.05;
            r.created_utc = format!("2024-03-{:02}T02:00:00.{:03}Z", 1 + i % 5, rng.random_range(0..3));
            r
        })
        .collect()
}

fn seeded_store(seed: u64, n: usize) -> (tempfile::TempDir, ShadowStore, Vec<TrajectoryRecord>) {
    let dir = tempfile::tempdir().unwrap();
    let store = ShadowStore::open(dir.path()).unwrap();
    let records = corpus(seed, n);
    store.ingest_batch(records.clone()).unwrap();
    (dir, store, records)
}

fn brute_force(records: &[TrajectoryRecord], q: &DatasetQuery) -> Vec<String> {
    let mut hits: Vec<&TrajectoryRecord> = records
        .iter()
        .filter(|r| {
            let in_range = |rg: &Option<Range>, v: f64| rg.is_none_or(|rg| rg.min <= v && v <= rg.max);
            q.robot_type.as_ref().is_none_or(|t| t == &r.robot_type)
                && (q.instance_ids.is_empty() || q.instance_ids.iter().any(|i| i == &r.instance_id))
                && (q.sites.is_empty() || q.sites.iter().any(|s| s == &r.site))
                && q.purpose.is_none_or(|p| p == r.purpose)
                && in_range(&q.velocity_scaling, r.velocity_scaling)
                && in_range(&q.acceleration_scaling, r.acceleration_scaling)
                && q.created.as_ref().is_none_or(|c| {
                    let t = chrono::DateTime::parse_from_rfc3339(&r.created_utc).unwrap();
                    let at = |s: &String| chrono::DateTime::parse_from_rfc3339(s).unwrap();
                    c.from.as_ref().is_none_or(|f| t >= at(f)) && c.to.as_ref().is_none_or(|e| t <= at(e))
                })
        })
        .collect();
    hits.sort_by(|a, b| (&a.created_utc, &a.record_id).cmp(&(&b.created_utc, &b.record_id)));
    hits.into_iter().take(q.limit.unwrap_or(usize::MAX)).map(|r| r.record_id.clone()).collect()
}

fn subset(pool: &'static [&'static str]) -> impl Strategy<Value = BTreeSet<String>> {
    proptest::sample::subsequence(pool.to_vec(), 0..=pool.len())
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

fn range() -> impl Strategy<Value = Option<Range>> {
    proptest::option::of((0.0f64..1.0, 0.0f64..0.6).prop_map(|(lo, w)| Range::new(lo, lo + w)))
}

fn query_strategy() -> impl Strategy<Value = DatasetQuery> {
    (
        subset(&INSTANCES),
        subset(&SITES),
        proptest::option::of(proptest::sample::select(Purpose::ALL.to_vec())),
        range(),
        range(),
        proptest::option::of((1u32..=5, 0u32..=4)),
        proptest::option::of(0usize..30),
    )
        .prop_map(|(instance_ids, sites, purpose, vs, acc, days, limit)| DatasetQuery {
            robot_type: None,
            instance_ids,
            sites,
            purpose,
            velocity_scaling: vs,
            acceleration_scaling: acc,
            created: days.map(|(from, span)| TimeRange {
                from: Some(format!("2024-03-{from:02}T02:00:00.001Z")),
                to: Some(format!("2024-03-{:02}T02:00:00.001Z", from + span)),
            }),
            limit,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn query_equals_linear_scan(q in query_strategy()) {
        thread_local! {
            static FIXTURE: (tempfile::TempDir, ShadowStore, Vec<TrajectoryRecord>) = seeded_store(11, 120);
        }
        FIXTURE.with(|(_, store, records)| {
            let got: Vec<String> = store.query(&q).unwrap().into_iter().map(|r| r.record_id).collect();
            prop_assert_eq!(got, brute_force(records, &q));
            Ok(())
        })?;
    }

    #[test]
    fn stats_totals_are_additive_over_sites(seed in any::<u64>()) {
        let (_dir, store, _) = seeded_store(seed, 25);
        let stats = store.stats(&DatasetQuery::all()).unwrap();
        let traj: u64 = stats.sites.values().map(|s| s.trajectories).sum();
        let meas: u64 = stats.sites.values().map(|s| s.measurements_per_axis).sum();
        prop_assert_eq!(stats.total.trajectories, traj);
        prop_assert_eq!(stats.total.measurements_per_axis, meas);
        for site in SITES {
            let alone = store.stats(&DatasetQuery::all().with_sites([site])).unwrap();
            let expected = stats.sites.get(site).map_or(0, |s| s.trajectories);
            prop_assert_eq!(alone.total.trajectories, expected);
        }
    }
}

#[test]
fn velocity_range_matches_oracle_over_seeded_corpus() {
    let (_dir, store, records) = seeded_store(5, 200);
    let q = DatasetQuery { velocity_scaling: Some(Range::new(0.2, 0.3)), ..Default::default() };
    let got: Vec<String> = store.query(&q).unwrap().into_iter().map(|r| r.record_id).collect();
    assert!(!got.is_empty());
    assert_eq!(got, brute_force(&records, &q));
}

#[test]
fn single_record_counts() {
    let dir = tempfile::tempdir().unwrap();
    let store = ShadowStore::open(dir.path()).unwrap();
    let empty = store.stats(&DatasetQuery::all()).unwrap();
    assert_eq!((empty.total.trajectories, empty.total.measurements_per_axis), (0, 0));
    assert!(empty.sites.is_empty());

    store.ingest(record("north", "r1", Purpose::Train, 100)).unwrap();
    let stats = store.stats(&DatasetQuery::all()).unwrap();
    assert_eq!(stats.total.trajectories, 1);
    assert_eq!(stats.total.measurements_per_axis, 100);
    let tau = stats.total.joints[0].tau;
    assert_eq!((tau.mean, tau.std), (1.0, 0.0));
}

#[test]
fn schema_and_duplicate_errors() {
    let dir = tempfile::tempdir().unwrap();
    let store = ShadowStore::open(dir.path()).unwrap();
    let mut v = serde_json::to_value(record("north", "r1", Purpose::Train, 2)).unwrap();
    v["purpose"] = json!("test");
    v.as_object_mut().unwrap().remove("record_id");
    let err = store.ingest_json(&v.to_string()).unwrap_err();
    assert_eq!(err.code(), "schema");
    assert!(err.to_string().contains("purpose"));

    let id = store.ingest(record("north", "r1", Purpose::Train, 2)).unwrap();
    let mut again = record("east", "r2", Purpose::Validation, 2);
    again.record_id = id;
    assert_eq!(store.ingest(again).unwrap_err().code(), "duplicate_record");
    assert_eq!(store.len(), 1);
}

#[test]
fn purpose_and_instance_filters() {
    let dir = tempfile::tempdir().unwrap();
    let store = ShadowStore::open(dir.path()).unwrap();
    store.ingest(record("north", "A", Purpose::Train, 2)).unwrap();
    store.ingest(record("north", "B", Purpose::Evaluation, 2)).unwrap();
    store.ingest(record("east", "A", Purpose::Evaluation, 2)).unwrap();
    let eval = store.query(&DatasetQuery::purpose(Purpose::Evaluation)).unwrap();
    assert_eq!(eval.len(), 2);
    assert!(eval.iter().all(|r| r.purpose == Purpose::Evaluation));
    let a = store.query(&DatasetQuery::all().with_instances(["A"])).unwrap();
    assert_eq!(a.len(), 2);
    assert!(a.iter().all(|r| r.instance_id == "A"));
}

#[test]
fn histogram_conserves_counts_and_flags_bad_joint() {
    let (_dir, store, _) = seeded_store(3, 40);
    store.register_robot_type(arm2()).unwrap();
    let q = DatasetQuery::purpose(Purpose::Train);
    let hist = store.histogram(&q, 1, 12).unwrap();
    assert_eq!(hist.edges.len(), 13);
    assert_eq!((hist.edges[0], hist.edges[12]), (-1.0, 1.0));
    assert_eq!(hist.total(), store.stats(&q).unwrap().total.measurements_per_axis);
    assert_eq!(store.histogram(&q, 2, 12).unwrap_err().code(), "joint_out_of_range");
}

#[test]
fn constant_position_fills_one_bin() {
    let dir = tempfile::tempdir().unwrap();
    let store = ShadowStore::open(dir.path()).unwrap();
    store.register_robot_type(arm2()).unwrap();
    let mut r = record("north", "r1", Purpose::Train, 30);
    r.samples.iter_mut().for_each(|s| s.q = vec![0.3, 0.3]);
    store.ingest(r).unwrap();
    let hist = store.histogram(&DatasetQuery::all(), 0, 10).unwrap();
    assert_eq!(hist.counts.iter().filter(|&&c| c > 0).count(), 1);
}

#[test]
fn uniform_corpus_gives_flat_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let store = ShadowStore::open(dir.path()).unwrap();
    store.register_robot_type(arm2()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let records: Vec<TrajectoryRecord> = (0..100)
        .map(|_| {
            let mut r = record("north", "r1", Purpose::Train, 0);
            r.samples = (0..1000)
                .map(|_| sample(rng.random_range(-1.0..1.0), 0.0))
                .collect();
            r
        })
        .collect();
    store.ingest_batch(records).unwrap();
    let hist = store.histogram(&DatasetQuery::all(), 0, 50).unwrap();
    assert_eq!(hist.total(), 100_000);
    let (lo, hi) = (hist.counts.iter().min().unwrap(), hist.counts.iter().max().unwrap());
    assert!((*hi as f64 / *lo as f64) < 1.5, "min {lo} max {hi}");
}

#[test]
fn views_project_and_resolve_deterministically() {
    let (_dir, store, _) = seeded_store(8, 60);
    let view = ShadowView::new("train-q-tau", DatasetQuery::purpose(Purpose::Train), vec![Field::Q, Field::Tau]);
    store.create_view(view).unwrap();
    let first = store.resolve_view("train-q-tau").unwrap();
    assert_eq!(first, store.resolve_view("train-q-tau").unwrap());
    assert_eq!(first.len(), store.query(&DatasetQuery::purpose(Purpose::Train)).unwrap().len());
    for r in &first {
        let v = serde_json::to_value(r).unwrap();
        assert_eq!(v.as_object().unwrap().keys().collect::<Vec<_>>(), ["samples"]);
        for s in v["samples"].as_array().unwrap() {
            let keys: BTreeSet<&str> = s.as_object().unwrap().keys().map(String::as_str).collect();
            assert_eq!(keys, BTreeSet::from(["q", "tau"]));
        }
    }
    assert_eq!(store.resolve_view("nope").unwrap_err().code(), "unknown_view");
    let empty = ShadowView::new("empty", DatasetQuery::all(), vec![]);
    assert_eq!(store.create_view(empty).unwrap_err().code(), "empty_projection");
}

#[test]
fn restart_preserves_queries_and_views() {
    let dir = tempfile::tempdir().unwrap();
    let queries = [
        DatasetQuery::all(),
        DatasetQuery::purpose(Purpose::Validation),
        DatasetQuery::all().with_sites(["east"]).with_instances(["r2", "r3"]),
    ];
    let before: Vec<_> = {
        let store = ShadowStore::open(dir.path()).unwrap();
        store.ingest_batch(corpus(21, 50)).unwrap();
        store.ingest(record("west", "r4", Purpose::Train, 7)).unwrap();
        store
            .create_view(ShadowView::new("v", DatasetQuery::purpose(Purpose::Train), vec![Field::RecordId]))
            .unwrap();
        queries.iter().map(|q| store.query(q).unwrap()).collect()
    };
    let store = ShadowStore::open(dir.path()).unwrap();
    let after: Vec<_> = queries.iter().map(|q| store.query(q).unwrap()).collect();
    assert_eq!(before, after);
    assert_eq!(store.resolve_view("v").unwrap().len(), store.query(&DatasetQuery::purpose(Purpose::Train)).unwrap().len());
}

#[test]
fn jsonl_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let store = ShadowStore::open(dir.path()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut lines: Vec<String> = corpus(4, 12)
        .into_iter()
        .map(|mut r| {
            for s in r.samples.iter_mut() {
                s.q = vec![rng.random_range(-3.0..3.0), rng.random::<f64>() * 1e-7];
                s.tau = vec![rng.random_range(-80.0..80.0), 1.0 / 3.0];
            }
            serde_json::to_string(&r).unwrap()
        })
        .collect();
    for line in &lines {
        store.ingest_json(line).unwrap();
    }
    let mut out: Vec<String> = store
        .query(&DatasetQuery::all())
        .unwrap()
        .iter()
        .map(|r| serde_json::to_string(r).unwrap())
        .collect();
    lines.sort();
    out.sort();
    assert_eq!(lines, out);
}
