use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::space::SearchSpace;
use super::SweepError;
use crate::fsutil::{append_durable, read_lines_repairing, write_atomic};
use crate::learner::{EvalReport, HyperParams, ModelCheckpoint};
use crate::store::{now_timestamp, parse_timestamp};

pub const DEFAULT_CONFIGS_PER_ROUND: usize = 10;
const JOURNAL_FILE: &str = "journal.jsonl";
const CHECKPOINT_DIR: &str = "checkpoints";

/// What a round trains: the shared foundation model or one robot instance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Foundation,
    Instance(String),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Foundation => f.write_str("foundation"),
            Target::Instance(id) => write!(f, "instance:{id}"),
        }
    }
}

impl FromStr for Target {
    type Err = String;

    /// Accepts `foundation` or `instance:<instance_id>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "foundation" => Ok(Target::Foundation),
            Some(("instance", id)) if !id.is_empty() => Ok(Target::Instance(id.to_string())),
            _ => Err(format!("`{s}` is neither `foundation` nor `instance:<id>`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setup {
    EndToEnd,
    FinetuneFoundation,
    FinetuneInstanceKnownHp,
    FinetuneInstanceUnknownHp,
}

impl Setup {
    pub const ALL: [Setup; 4] =
        [Setup::EndToEnd, Setup::FinetuneFoundation, Setup::FinetuneInstanceKnownHp, Setup::FinetuneInstanceUnknownHp];

    pub fn as_str(self) -> &'static str {
        match self {
            Setup::EndToEnd => "end_to_end",
            Setup::FinetuneFoundation => "finetune_foundation",
            Setup::FinetuneInstanceKnownHp => "finetune_instance_known_hp",
            Setup::FinetuneInstanceUnknownHp => "finetune_instance_unknown_hp",
        }
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Setup::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| format!("unknown setup `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigStatus {
    Issued,
    Reported,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssuedConfig {
    pub config_id: String,
    pub agent_id: String,
    pub params: HyperParams,
    pub issued_utc: String,
    pub status: ConfigStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRound {
    pub round_id: String,
    pub target: Target,
    pub setup: Setup,
    pub configs_per_round: usize,
    pub space: SearchSpace,
    pub seed: u64,
    /// When false the target's best model was cleared as the round opened.
    pub carry_over: bool,
    pub opened_utc: String,
    pub closed_utc: Option<String>,
    pub configs: Vec<IssuedConfig>,
}

fn default_configs_per_round() -> usize {
    DEFAULT_CONFIGS_PER_ROUND
}

fn default_true() -> bool {
    true
}

/// Parameters of `open_round`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundSpec {
    pub target: Target,
    pub setup: Setup,
    #[serde(default)]
    pub space: SearchSpace,
    #[serde(default = "default_configs_per_round")]
    pub configs_per_round: usize,
    /// Defaults to the round's ordinal.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Compare against the best model from earlier rounds (true) or start
    /// the target afresh.
    #[serde(default = "default_true")]
    pub carry_over: bool,
}

impl RoundSpec {
    pub fn new(target: Target, setup: Setup, space: SearchSpace) -> Self {
        Self { target, setup, space, configs_per_round: DEFAULT_CONFIGS_PER_ROUND, seed: None, carry_over: true }
    }
}

/// One reported result, accepted or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub round_id: String,
    pub config_id: String,
    pub agent_id: String,
    pub cross_validation_loss: f64,
    pub accepted: bool,
    pub checkpoint_id: String,
    pub reported_utc: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestModel {
    pub target: Target,
    pub checkpoint_id: String,
    pub cross_validation_loss: f64,
    pub round_id: String,
    pub config_id: String,
    pub hyperparams: HyperParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOutcome {
    pub accepted: bool,
    /// Repository best after the report.
    pub best: BestModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStatus {
    pub round_id: String,
    pub target: Target,
    pub setup: Setup,
    pub open: bool,
    pub configs_per_round: usize,
    pub issued: usize,
    pub reported: usize,
    pub expired: usize,
    pub outstanding: usize,
    pub accepted: usize,
    /// Lowest loss reported in this round.
    pub best_loss: Option<f64>,
    /// Closed, or every config issued and none outstanding.
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOverview {
    pub rounds: Vec<RoundStatus>,
    pub best: Vec<BestModel>,
}

/// Journal line. Replaying the journal from the start rebuilds the state.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Opened { round: SweepRound },
    Issued { round_id: String, config: IssuedConfig },
    Reported { entry: HistoryEntry },
    Expired { round_id: String, config_ids: Vec<String>, at: String },
    Closed { round_id: String, at: String },
}

#[derive(Default)]
struct State {
    rounds: BTreeMap<String, SweepRound>,
    open: BTreeMap<Target, String>,
    best: BTreeMap<Target, BestModel>,
    history: BTreeMap<Target, Vec<HistoryEntry>>,
}

impl State {
    fn round(&self, round_id: &str) -> Result<&SweepRound, SweepError> {
        self.rounds.get(round_id).ok_or_else(|| SweepError::UnknownRound(round_id.to_string()))
    }

    fn round_mut(&mut self, round_id: &str) -> Result<&mut SweepRound, SweepError> {
        self.rounds.get_mut(round_id).ok_or_else(|| SweepError::UnknownRound(round_id.to_string()))
    }

    fn apply(&mut self, event: Event) -> Result<(), SweepError> {
        match event {
            Event::Opened { round } => {
                if !round.carry_over {
                    self.best.remove(&round.target);
                }
                self.open.insert(round.target.clone(), round.round_id.clone());
                self.rounds.insert(round.round_id.clone(), round);
            }
            Event::Issued { round_id, config } => self.round_mut(&round_id)?.configs.push(config),
            Event::Reported { entry } => {
                let round = self.round_mut(&entry.round_id)?;
                let config = round
                    .configs
                    .iter_mut()
                    .find(|c| c.config_id == entry.config_id)
                    .ok_or_else(|| SweepError::UnknownConfig(entry.config_id.clone()))?;
                config.status = ConfigStatus::Reported;
                let params = config.params.clone();
                let target = round.target.clone();
                if entry.accepted {
                    self.best.insert(
                        target.clone(),
                        BestModel {
                            target: target.clone(),
                            checkpoint_id: entry.checkpoint_id.clone(),
                            cross_validation_loss: entry.cross_validation_loss,
                            round_id: entry.round_id.clone(),
                            config_id: entry.config_id.clone(),
                            hyperparams: params,
                        },
                    );
                }
                self.history.entry(target).or_default().push(entry);
            }
            Event::Expired { round_id, config_ids, .. } => {
                let round = self.round_mut(&round_id)?;
                for c in round.configs.iter_mut().filter(|c| config_ids.contains(&c.config_id)) {
                    if c.status == ConfigStatus::Issued {
                        c.status = ConfigStatus::Expired;
                    }
                }
            }
            Event::Closed { round_id, at } => {
                let round = self.round_mut(&round_id)?;
                round.closed_utc = Some(at);
                let target = round.target.clone();
                if self.open.get(&target) == Some(&round_id) {
                    self.open.remove(&target);
                }
            }
        }
        Ok(())
    }

    fn status(&self, round: &SweepRound) -> RoundStatus {
        let count = |s: ConfigStatus| round.configs.iter().filter(|c| c.status == s).count();
        let entries: Vec<&HistoryEntry> = self
            .history
            .get(&round.target)
            .map(|h| h.iter().filter(|e| e.round_id == round.round_id).collect())
            .unwrap_or_default();
        let outstanding = count(ConfigStatus::Issued);
        let open = round.closed_utc.is_none();
        RoundStatus {
            round_id: round.round_id.clone(),
            target: round.target.clone(),
            setup: round.setup,
            open,
            configs_per_round: round.configs_per_round,
            issued: round.configs.len(),
            reported: count(ConfigStatus::Reported),
            expired: count(ConfigStatus::Expired),
            outstanding,
            accepted: entries.iter().filter(|e| e.accepted).count(),
            best_loss: entries.iter().map(|e| e.cross_validation_loss).min_by(f64::total_cmp),
            done: !open || (round.configs.len() >= round.configs_per_round && outstanding == 0),
        }
    }
}

/// Runs after an accepted report has been persisted; the returned report is
/// stored beside the checkpoint.
pub type EvalHook = Arc<dyn Fn(&Target, &ModelCheckpoint) -> Option<EvalReport> + Send + Sync>;

#[derive(Debug, Clone, Default)]
pub struct CoordinatorOptions {
    /// Issued configs unreported for longer than this are expired.
    pub config_timeout: Option<Duration>,
}

/// Sweep server state rooted at a repository directory holding
/// `journal.jsonl` and `checkpoints/<checkpoint_id>.json`.
pub struct Coordinator {
    dir: PathBuf,
    options: CoordinatorOptions,
    state: Mutex<State>,
    eval_hook: RwLock<Option<EvalHook>>,
}

fn valid_checkpoint_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
}

impl Coordinator {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, SweepError> {
        Self::open_with(dir, CoordinatorOptions::default())
    }

    pub fn open_with(dir: impl AsRef<Path>, options: CoordinatorOptions) -> Result<Self, SweepError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join(CHECKPOINT_DIR))?;
        let path = dir.join(JOURNAL_FILE);
        let lines = read_lines_repairing(&path)?;
        let last = lines.len().saturating_sub(1);
        let mut state = State::default();
        for (i, (offset, line)) in lines.iter().enumerate() {
            let event: Event = match serde_json::from_str(line) {
                Ok(e) => e,
                Err(e) if i == last => {
                    log::warn!("{}: dropping unparsable final line: {e}", path.display());
                    fs::OpenOptions::new().write(true).open(&path)?.set_len(*offset)?;
                    break;
                }
                Err(e) => return Err(SweepError::Io(format!("{JOURNAL_FILE} at byte {offset}: {e}"))),
            };
            state
                .apply(event)
                .map_err(|e| SweepError::Io(format!("{JOURNAL_FILE} at byte {offset} is inconsistent: {e}")))?;
        }
        Ok(Self { dir, options, state: Mutex::new(state), eval_hook: RwLock::new(None) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn set_eval_hook(&self, hook: EvalHook) {
        *self.eval_hook.write() = Some(hook);
    }

    /// Appends `event` to the journal, then applies it.
    fn commit(&self, state: &mut State, event: Event) -> Result<(), SweepError> {
        let mut line = serde_json::to_string(&event).map_err(|e| SweepError::Io(e.to_string()))?;
        line.push('\n');
        append_durable(&self.dir.join(JOURNAL_FILE), line.as_bytes())?;
        state.apply(event)
    }

    fn expire_stale(&self, state: &mut State) -> Result<(), SweepError> {
        let Some(timeout) = self.options.config_timeout else {
            return Ok(());
        };
        let now = chrono::Utc::now();
        let timeout = chrono::Duration::from_std(timeout).unwrap_or(chrono::Duration::MAX);
        let mut stale: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for round_id in state.open.values() {
            for c in &state.rounds[round_id].configs {
                let issued = parse_timestamp(&c.issued_utc).map_err(SweepError::Io)?;
                if c.status == ConfigStatus::Issued && now - issued > timeout {
                    stale.entry(round_id.clone()).or_default().push(c.config_id.clone());
                }
            }
        }
        for (round_id, config_ids) in stale {
            log::info!("round {round_id}: expiring {config_ids:?}");
            self.commit(state, Event::Expired { round_id, config_ids, at: now_timestamp() })?;
        }
        Ok(())
    }

    pub fn open_round(&self, spec: RoundSpec) -> Result<String, SweepError> {
        spec.space.validate()?;
        if spec.configs_per_round == 0 {
            return Err(SweepError::InvalidRequest("configs_per_round must be at least 1".into()));
        }
        if let Target::Instance(id) = &spec.target {
            if id.is_empty() {
                return Err(SweepError::InvalidRequest("instance target needs an instance_id".into()));
            }
        }
        let mut state = self.state.lock();
        if let Some(open) = state.open.get(&spec.target) {
            return Err(SweepError::RoundOpen { target: spec.target.to_string(), round_id: open.clone() });
        }
        let ordinal = state.rounds.len() as u64 + 1;
        let round_id = format!("r{ordinal:04}");
        let round = SweepRound {
            round_id: round_id.clone(),
            target: spec.target,
            setup: spec.setup,
            configs_per_round: spec.configs_per_round,
            space: spec.space,
            seed: spec.seed.unwrap_or(ordinal),
            carry_over: spec.carry_over,
            opened_utc: now_timestamp(),
            closed_utc: None,
            configs: Vec::new(),
        };
        self.commit(&mut state, Event::Opened { round })?;
        log::info!("opened round {round_id}");
        Ok(round_id)
    }

    /// Next configuration of the round, or `None` once the round has issued
    /// all of its configurations or was closed.
    pub fn request_config(&self, round_id: &str, agent_id: &str) -> Result<Option<IssuedConfig>, SweepError> {
        if agent_id.is_empty() {
            return Err(SweepError::InvalidRequest("agent_id must not be empty".into()));
        }
        let mut state = self.state.lock();
        self.expire_stale(&mut state)?;
        let round = state.round(round_id)?;
        if round.closed_utc.is_some() || round.configs.len() >= round.configs_per_round {
            return Ok(None);
        }
        let index = round.configs.len();
        let config = IssuedConfig {
            config_id: format!("{round_id}-c{:02}", index + 1),
            agent_id: agent_id.to_string(),
            params: round.space.sample(round.seed, index as u64),
            issued_utc: now_timestamp(),
            status: ConfigStatus::Issued,
        };
        self.commit(&mut state, Event::Issued { round_id: round_id.to_string(), config: config.clone() })?;
        Ok(Some(config))
    }

    /// Gates `checkpoint` on a strictly lower loss than the target's current
    /// best. An accepted checkpoint is on disk before the report is journaled.
    pub fn report_result(
        &self,
        round_id: &str,
        config_id: &str,
        checkpoint: &ModelCheckpoint,
        loss: f64,
    ) -> Result<ReportOutcome, SweepError> {
        if !(loss.is_finite() && loss >= 0.0) {
            return Err(SweepError::InvalidRequest(format!("cross_validation_loss must be finite and >= 0, got {loss}")));
        }
        checkpoint.verify().map_err(|e| SweepError::Checkpoint(e.to_string()))?;
        let (outcome, target) = {
            let mut state = self.state.lock();
            self.expire_stale(&mut state)?;
            let round = state.round(round_id)?;
            let config = round
                .configs
                .iter()
                .find(|c| c.config_id == config_id)
                .ok_or_else(|| SweepError::UnknownConfig(config_id.to_string()))?;
            match config.status {
                ConfigStatus::Issued => {}
                ConfigStatus::Reported => return Err(SweepError::DuplicateReport(config_id.to_string())),
                ConfigStatus::Expired => return Err(SweepError::ConfigExpired(config_id.to_string())),
            }
            if checkpoint.hyperparams != config.params {
                return Err(SweepError::ConfigMismatch(config_id.to_string()));
            }
            let target = round.target.clone();
            let accepted = state.best.get(&target).is_none_or(|b| loss < b.cross_validation_loss);
            if accepted {
                let path = self.checkpoint_path(&checkpoint.checkpoint_id);
                if !path.exists() {
                    checkpoint.save(&path).map_err(|e| SweepError::Io(e.to_string()))?;
                }
            }
            let entry = HistoryEntry {
                round_id: round_id.to_string(),
                config_id: config_id.to_string(),
                agent_id: config.agent_id.clone(),
                cross_validation_loss: loss,
                accepted,
                checkpoint_id: checkpoint.checkpoint_id.clone(),
                reported_utc: now_timestamp(),
            };
            self.commit(&mut state, Event::Reported { entry })?;
            let best = state.best[&target].clone();
            log::info!("{config_id}: loss {loss:.5}, accepted {accepted}, best {:.5}", best.cross_validation_loss);
            (ReportOutcome { accepted, best }, target)
        };
        if outcome.accepted {
            let hook = self.eval_hook.read().clone();
            if let Some(report) = hook.and_then(|h| h(&target, checkpoint)) {
                let json = serde_json::to_vec_pretty(&report).map_err(|e| SweepError::Io(e.to_string()))?;
                write_atomic(&self.eval_path(&checkpoint.checkpoint_id), &json)?;
            }
        }
        Ok(outcome)
    }

    /// Closes the round, expiring every config still outstanding.
    pub fn close_round(&self, round_id: &str) -> Result<RoundStatus, SweepError> {
        let mut state = self.state.lock();
        let round = state.round(round_id)?;
        if round.closed_utc.is_some() {
            return Err(SweepError::RoundClosed(round_id.to_string()));
        }
        let pending: Vec<String> = round
            .configs
            .iter()
            .filter(|c| c.status == ConfigStatus::Issued)
            .map(|c| c.config_id.clone())
            .collect();
        let at = now_timestamp();
        if !pending.is_empty() {
            self.commit(
                &mut state,
                Event::Expired { round_id: round_id.to_string(), config_ids: pending, at: at.clone() },
            )?;
        }
        self.commit(&mut state, Event::Closed { round_id: round_id.to_string(), at })?;
        Ok(state.status(state.round(round_id)?))
    }

    pub fn status(&self, round_id: &str) -> Result<RoundStatus, SweepError> {
        let mut state = self.state.lock();
        self.expire_stale(&mut state)?;
        Ok(state.status(state.round(round_id)?))
    }

    pub fn round(&self, round_id: &str) -> Result<SweepRound, SweepError> {
        self.state.lock().round(round_id).cloned()
    }

    pub fn overview(&self) -> Result<SweepOverview, SweepError> {
        let mut state = self.state.lock();
        self.expire_stale(&mut state)?;
        Ok(SweepOverview {
            rounds: state.rounds.values().map(|r| state.status(r)).collect(),
            best: state.best.values().cloned().collect(),
        })
    }

    pub fn best(&self, target: &Target) -> Result<BestModel, SweepError> {
        self.state.lock().best.get(target).cloned().ok_or_else(|| SweepError::NoModel(target.to_string()))
    }

    /// Every report for `target` in arrival order.
    pub fn history(&self, target: &Target) -> Vec<HistoryEntry> {
        self.state.lock().history.get(target).cloned().unwrap_or_default()
    }

    fn checkpoint_path(&self, id: &str) -> PathBuf {
        self.dir.join(CHECKPOINT_DIR).join(format!("{id}.json"))
    }

    fn eval_path(&self, id: &str) -> PathBuf {
        self.dir.join(CHECKPOINT_DIR).join(format!("{id}.eval.json"))
    }

    pub fn checkpoint(&self, id: &str) -> Result<ModelCheckpoint, SweepError> {
        let path = self.checkpoint_path(id);
        if !valid_checkpoint_id(id) || !path.exists() {
            return Err(SweepError::UnknownCheckpoint(id.to_string()));
        }
        ModelCheckpoint::load(&path).map_err(|e| SweepError::Checkpoint(e.to_string()))
    }

    /// Evaluation stored by the post-accept hook, if any.
    pub fn eval_report(&self, id: &str) -> Result<Option<EvalReport>, SweepError> {
        if !valid_checkpoint_id(id) {
            return Err(SweepError::UnknownCheckpoint(id.to_string()));
        }
        match fs::read(self.eval_path(id)) {
            Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| SweepError::Io(e.to_string())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_round_trips_through_text() {
        for t in [Target::Foundation, Target::Instance("arm-3".into())] {
            assert_eq!(t.to_string().parse::<Target>().unwrap(), t);
        }
        assert!("instance:".parse::<Target>().is_err());
        assert_eq!(serde_json::to_string(&Target::Instance("a".into())).unwrap(), r#"{"instance":"a"}"#);
    }

    #[test]
    fn round_spec_defaults() {
        let spec: RoundSpec = serde_json::from_str(r#"{"target":"foundation","setup":"end_to_end"}"#).unwrap();
        assert_eq!(spec.configs_per_round, 10);
        assert!(spec.carry_over);
        assert_eq!(spec.space, SearchSpace::default());
    }
}
