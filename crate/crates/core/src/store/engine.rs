use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::histogram::{build_histogram, Histogram, RobotTypeInfo};
use super::query::DatasetQuery;
use super::record::{now_timestamp, parse_timestamp, record_from_value, Purpose, TrajectoryRecord};
use super::stats::{compute_stats, DatasetStats};
use super::view::{project, ProjectedRecord, ShadowView};
use super::StoreError;
use crate::fsutil::{append_durable, read_lines_repairing, write_atomic};

const SEGMENT_DIR: &str = "segments";
const STATS_DIR: &str = "stats";
const INDEX_FILE: &str = "index.jsonl";
const VIEWS_FILE: &str = "views.jsonl";
const ROBOT_TYPES_FILE: &str = "robot_types.json";

/// Location of one record inside the segment files.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
struct IndexEntry {
    record_id: String,
    segment: String,
    offset: u64,
    length: u64,
}

#[derive(Default)]
struct State {
    /// Sorted by `(created_utc, record_id)`.
    records: Vec<Arc<TrajectoryRecord>>,
    ids: HashSet<String>,
    views: BTreeMap<String, ShadowView>,
    robot_types: BTreeMap<String, RobotTypeInfo>,
}

impl State {
    fn insert(&mut self, record: Arc<TrajectoryRecord>) {
        let key = (&record.created_utc, &record.record_id);
        let pos = self
            .records
            .partition_point(|r| (&r.created_utc, &r.record_id) < key);
        self.ids.insert(record.record_id.clone());
        self.records.insert(pos, record);
    }
}

/// Directory-backed store. Cheap to share behind an `Arc`; readers never
/// block each other and writers are serialized.
pub struct ShadowStore {
    dir: PathBuf,
    state: RwLock<State>,
    writer: Mutex<()>,
}

fn segment_name(site: &str, purpose: Purpose) -> String {
    format!("{site}.{purpose}.jsonl")
}

impl ShadowStore {
    /// Opens or creates a store rooted at `dir`, replaying every segment.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join(SEGMENT_DIR))?;
        fs::create_dir_all(dir.join(STATS_DIR))?;
        let mut state = State::default();

        let types_path = dir.join(ROBOT_TYPES_FILE);
        if types_path.exists() {
            let text = fs::read_to_string(&types_path)?;
            state.robot_types = serde_json::from_str(&text)
                .map_err(|e| StoreError::Io(format!("{}: {e}", types_path.display())))?;
        }

        let mut segments: Vec<PathBuf> = fs::read_dir(dir.join(SEGMENT_DIR))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        segments.sort();
        let mut expected_index = Vec::new();
        for path in &segments {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            let lines = read_lines_repairing(path)?;
            let last = lines.len().saturating_sub(1);
            for (i, (offset, line)) in lines.iter().enumerate() {
                let record: TrajectoryRecord = match serde_json::from_str(line) {
                    Ok(r) => r,
                    Err(e) if i == last => {
                        log::warn!("{}: dropping unparsable final line: {e}", path.display());
                        fs::OpenOptions::new().write(true).open(path)?.set_len(*offset)?;
                        break;
                    }
                    Err(e) => {
                        return Err(StoreError::Io(format!("{} at byte {offset}: {e}", path.display())))
                    }
                };
                if segment_name(&record.site, record.purpose) != name {
                    return Err(StoreError::Io(format!(
                        "record {} belongs to segment {}, found in {name}",
                        record.record_id,
                        segment_name(&record.site, record.purpose)
                    )));
                }
                if state.ids.contains(&record.record_id) {
                    return Err(StoreError::Io(format!("record {} stored twice", record.record_id)));
                }
                expected_index.push(IndexEntry {
                    record_id: record.record_id.clone(),
                    segment: name.clone(),
                    offset: *offset,
                    length: line.len() as u64 + 1,
                });
                state.insert(Arc::new(record));
            }
        }
        reconcile_index(&dir.join(INDEX_FILE), expected_index)?;

        for (_, line) in read_lines_repairing(&dir.join(VIEWS_FILE))? {
            let view: ShadowView = serde_json::from_str(&line)
                .map_err(|e| StoreError::Io(format!("{VIEWS_FILE}: {e}")))?;
            state.views.insert(view.view_id.clone(), view);
        }

        log::debug!("opened store {} with {} records", dir.display(), state.records.len());
        Ok(Self { dir, state: RwLock::new(state), writer: Mutex::new(()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.state.read().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Ingests one record; see [`ShadowStore::ingest_batch`].
    pub fn ingest(&self, record: TrajectoryRecord) -> Result<String, StoreError> {
        Ok(self.ingest_batch(vec![record])?.remove(0))
    }

    /// Parses and ingests one JSON line, keeping any `record_id` and
    /// `created_utc` it carries.
    pub fn ingest_json(&self, line: &str) -> Result<String, StoreError> {
        let value = serde_json::from_str(line).map_err(|e| StoreError::schema("record", e.to_string()))?;
        self.ingest(record_from_value(value)?)
    }

    /// Validates every record, then appends them all durably. Missing ids and
    /// timestamps are assigned here. Either every record becomes visible or,
    /// on a validation error, none does.
    pub fn ingest_batch(&self, mut records: Vec<TrajectoryRecord>) -> Result<Vec<String>, StoreError> {
        let _guard = self.writer.lock();
        let now = now_timestamp();
        {
            let state = self.state.read();
            let mut batch_ids = HashSet::new();
            for r in records.iter_mut() {
                if r.record_id.is_empty() {
                    r.record_id = uuid::Uuid::new_v4().to_string();
                }
                if r.created_utc.is_empty() {
                    r.created_utc = now.clone();
                }
                r.validate()?;
                if state.ids.contains(&r.record_id) || !batch_ids.insert(r.record_id.clone()) {
                    return Err(StoreError::DuplicateRecord(r.record_id.clone()));
                }
                if let Some(info) = state.robot_types.get(&r.robot_type) {
                    if r.n_joints() != info.n_joints {
                        return Err(StoreError::schema(
                            "samples",
                            format!("{} has {} joints, samples have {}", info.name, info.n_joints, r.n_joints()),
                        ));
                    }
                }
            }
        }

        let mut by_segment: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            let line = serde_json::to_string(r).map_err(|e| StoreError::Io(e.to_string()))?;
            by_segment.entry(segment_name(&r.site, r.purpose)).or_default().push((i, line));
        }
        let mut index = String::new();
        for (segment, lines) in &by_segment {
            let mut buf = String::with_capacity(lines.iter().map(|(_, l)| l.len() + 1).sum());
            for (_, line) in lines {
                buf.push_str(line);
                buf.push('\n');
            }
            let mut offset = append_durable(&self.dir.join(SEGMENT_DIR).join(segment), buf.as_bytes())?;
            for (i, line) in lines {
                let entry = IndexEntry {
                    record_id: records[*i].record_id.clone(),
                    segment: segment.clone(),
                    offset,
                    length: line.len() as u64 + 1,
                };
                offset += entry.length;
                index.push_str(&serde_json::to_string(&entry).expect("index entry serializes"));
                index.push('\n');
            }
        }
        append_durable(&self.dir.join(INDEX_FILE), index.as_bytes())?;

        let ids = records.iter().map(|r| r.record_id.clone()).collect();
        let mut state = self.state.write();
        for r in records {
            state.insert(Arc::new(r));
        }
        Ok(ids)
    }

    fn matching(&self, q: &DatasetQuery) -> Result<Vec<Arc<TrajectoryRecord>>, StoreError> {
        q.validate()?;
        let state = self.state.read();
        let limit = q.limit.unwrap_or(usize::MAX);
        Ok(state.records.iter().filter(|r| q.matches(r)).take(limit).cloned().collect())
    }

    /// Records matching every filter, ordered by `(created_utc, record_id)`.
    pub fn query(&self, q: &DatasetQuery) -> Result<Vec<TrajectoryRecord>, StoreError> {
        Ok(self.matching(q)?.iter().map(|r| (**r).clone()).collect())
    }

    pub fn stats(&self, q: &DatasetQuery) -> Result<DatasetStats, StoreError> {
        let matches = self.matching(q)?;
        Ok(compute_stats(matches.iter().map(|r| r.as_ref())))
    }

    /// Joint-position histogram spanning the robot type's joint limits. The
    /// robot type comes from the query or, failing that, from the matched
    /// records when they agree on one.
    pub fn histogram(&self, q: &DatasetQuery, joint_index: usize, n_bins: usize) -> Result<Histogram, StoreError> {
        let matches = self.matching(q)?;
        let type_name = match &q.robot_type {
            Some(t) => t.clone(),
            None => {
                let names: HashSet<&str> = matches.iter().map(|r| r.robot_type.as_str()).collect();
                match names.into_iter().collect::<Vec<_>>().as_slice() {
                    [one] => one.to_string(),
                    [] => return Err(StoreError::UnknownRobotType("query matched no records and names no robot type".into())),
                    _ => return Err(StoreError::UnknownRobotType("matched records span several robot types; set robot_type".into())),
                }
            }
        };
        let info = self
            .robot_type(&type_name)
            .ok_or_else(|| StoreError::UnknownRobotType(type_name.clone()))?;
        build_histogram(&info, joint_index, n_bins, matches.iter().map(|r| r.as_ref()))
    }

    pub fn register_robot_type(&self, info: RobotTypeInfo) -> Result<(), StoreError> {
        info.validate()?;
        let _guard = self.writer.lock();
        let mut types = self.state.read().robot_types.clone();
        if types.get(&info.name) == Some(&info) {
            return Ok(());
        }
        types.insert(info.name.clone(), info);
        let json = serde_json::to_vec_pretty(&types).map_err(|e| StoreError::Io(e.to_string()))?;
        write_atomic(&self.dir.join(ROBOT_TYPES_FILE), &json)?;
        self.state.write().robot_types = types;
        Ok(())
    }

    pub fn robot_type(&self, name: &str) -> Option<RobotTypeInfo> {
        self.state.read().robot_types.get(name).cloned()
    }

    pub fn create_view(&self, mut view: ShadowView) -> Result<String, StoreError> {
        view.validate()?;
        let _guard = self.writer.lock();
        if self.state.read().views.contains_key(&view.view_id) {
            return Err(StoreError::DuplicateView(view.view_id));
        }
        if view.created_utc.is_empty() {
            view.created_utc = now_timestamp();
        } else {
            parse_timestamp(&view.created_utc).map_err(|m| StoreError::schema("created_utc", m))?;
        }
        let mut line = serde_json::to_string(&view).map_err(|e| StoreError::Io(e.to_string()))?;
        line.push('\n');
        append_durable(&self.dir.join(VIEWS_FILE), line.as_bytes())?;
        let id = view.view_id.clone();
        self.state.write().views.insert(id.clone(), view);
        Ok(id)
    }

    pub fn view(&self, view_id: &str) -> Result<ShadowView, StoreError> {
        self.state
            .read()
            .views
            .get(view_id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownView(view_id.to_string()))
    }

    pub fn views(&self) -> Vec<ShadowView> {
        self.state.read().views.values().cloned().collect()
    }

    /// Runs the view's query and applies its projection.
    pub fn resolve_view(&self, view_id: &str) -> Result<Vec<ProjectedRecord>, StoreError> {
        let view = self.view(view_id)?;
        Ok(self.matching(&view.query)?.iter().map(|r| project(r, &view.projection)).collect())
    }

    /// Full records selected by a view's query, for consumers that need
    /// every field (training).
    pub fn view_records(&self, view_id: &str) -> Result<Vec<TrajectoryRecord>, StoreError> {
        self.query(&self.view(view_id)?.query)
    }

    /// Persists a statistics document under `stats/<run_id>.json`.
    pub fn put_stats_report(&self, run_id: &str, stats: &DatasetStats) -> Result<PathBuf, StoreError> {
        let path = self.report_path(run_id)?;
        let json = serde_json::to_vec_pretty(stats).map_err(|e| StoreError::Io(e.to_string()))?;
        write_atomic(&path, &json)?;
        Ok(path)
    }

    pub fn get_stats_report(&self, run_id: &str) -> Result<DatasetStats, StoreError> {
        let path = self.report_path(run_id)?;
        let text = fs::read_to_string(&path).map_err(|_| StoreError::UnknownReport(run_id.to_string()))?;
        serde_json::from_str(&text).map_err(|e| StoreError::Io(format!("{}: {e}", path.display())))
    }

    fn report_path(&self, run_id: &str) -> Result<PathBuf, StoreError> {
        if run_id.is_empty() || !run_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(StoreError::schema("run_id", "use letters, digits, '-' and '_' only"));
        }
        Ok(self.dir.join(STATS_DIR).join(format!("{run_id}.json")))
    }
}

/// Rewrites the index when it disagrees with the segments, which happens
/// after a crash between a segment append and the index append.
fn reconcile_index(path: &Path, mut expected: Vec<IndexEntry>) -> Result<(), StoreError> {
    let mut found: Vec<IndexEntry> = read_lines_repairing(path)?
        .iter()
        .filter_map(|(_, line)| serde_json::from_str(line).ok())
        .collect();
    expected.sort();
    found.sort();
    if found != expected {
        log::warn!("{}: index out of date, rebuilding", path.display());
        let mut text = String::new();
        for e in &expected {
            text.push_str(&serde_json::to_string(e).expect("index entry serializes"));
            text.push('\n');
        }
        write_atomic(path, text.as_bytes())?;
    }
    Ok(())
}
