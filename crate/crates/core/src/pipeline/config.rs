use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Duration, Timelike, Utc};
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::dynamics::{InstancePerturbation, RobotModel};
use crate::learner::{HyperParams, DEFAULT_FOLDS};
use crate::store::Range;
use crate::sweep::{SearchSpace, DEFAULT_CONFIGS_PER_ROUND};

/// Where a service lives: an in-process directory or a remote socket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// `local:<dir>`
    Local(PathBuf),
    /// `tcp://host:port`, length-delimited JSON frames.
    Tcp(String),
    /// `unix:///path/to.sock`, length-delimited JSON frames.
    Unix(PathBuf),
    /// `http://host:port`, JSON over HTTP.
    Http(String),
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(rest) = s.strip_prefix("local:") {
            return Ok(Endpoint::Local(PathBuf::from(rest)));
        }
        if let Some(rest) = s.strip_prefix("tcp://") {
            return Ok(Endpoint::Tcp(rest.to_string()));
        }
        if let Some(rest) = s.strip_prefix("unix://") {
            return Ok(Endpoint::Unix(PathBuf::from(rest)));
        }
        if s.starts_with("http://") {
            return Ok(Endpoint::Http(s.trim_end_matches('/').to_string()));
        }
        Err(format!("endpoint `{s}` must start with local:, tcp://, unix:// or http://"))
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Local(p) => write!(f, "local:{}", p.display()),
            Endpoint::Tcp(a) => write!(f, "tcp://{a}"),
            Endpoint::Unix(p) => write!(f, "unix://{}", p.display()),
            Endpoint::Http(u) => f.write_str(u),
        }
    }
}

impl Serialize for Endpoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Endpoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Instance deviations of a site's robot from the nominal model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    #[serde(default)]
    pub mass_scale: Vec<f64>,
    #[serde(default)]
    pub payload_mass: f64,
    #[serde(default)]
    pub payload_offset: [f64; 3],
    #[serde(default = "one")]
    pub friction_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self { mass_scale: Vec::new(), payload_mass: 0.0, payload_offset: [0.0; 3], friction_scale: 1.0 }
    }
}

impl PerturbationSpec {
    pub fn for_instance(&self, instance_id: &str) -> InstancePerturbation {
        InstancePerturbation {
            instance_id: instance_id.to_string(),
            mass_scale: self.mass_scale.clone(),
            payload_mass: self.payload_mass,
            payload_offset: self.payload_offset,
            friction_scale: self.friction_scale,
        }
    }
}

/// One simulated organization running one robot instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteConfig {
    pub name: String,
    pub instance_id: String,
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub train: usize,
    #[serde(default)]
    pub validation: usize,
    #[serde(default)]
    pub evaluation: usize,
    /// Interval the per-trajectory velocity scaling is drawn from.
    #[serde(default = "default_scaling")]
    pub velocity_scaling: [f64; 2],
    #[serde(default = "default_scaling")]
    pub acceleration_scaling: [f64; 2],
    #[serde(default = "default_waypoints")]
    pub n_waypoints: usize,
    /// Torque sensor noise per joint [N m].
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_scaling() -> [f64; 2] {
    [0.3, 1.0]
}

fn default_waypoints() -> usize {
    4
}

fn default_sigma() -> f64 {
    0.05
}

impl SiteConfig {
    pub fn velocity_range(&self) -> Range {
        Range::new(self.velocity_scaling[0], self.velocity_scaling[1])
    }

    pub fn acceleration_range(&self) -> Range {
        Range::new(self.acceleration_scaling[0], self.acceleration_scaling[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_configs")]
    pub configs_per_round: usize,
    /// Local agents training concurrently during a round.
    #[serde(default = "default_agents")]
    pub agents: usize,
    #[serde(default)]
    pub space: SearchSpace,
    /// Reference sensor accuracy reported beside the simulated noise floor.
    #[serde(default = "default_reference_floor")]
    pub reference_floor: f64,
}

fn default_folds() -> usize {
    DEFAULT_FOLDS
}

fn default_configs() -> usize {
    DEFAULT_CONFIGS_PER_ROUND
}

fn default_agents() -> usize {
    1
}

fn default_reference_floor() -> f64 {
    crate::learner::DEFAULT_SENSOR_FLOOR
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            folds: default_folds(),
            configs_per_round: default_configs(),
            agents: default_agents(),
            space: SearchSpace::default(),
            reference_floor: default_reference_floor(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct K2dConfig {
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_per_directive")]
    pub trajectories_per_directive: usize,
    /// Site that collects the directed trajectories; defaults to the first.
    #[serde(default)]
    pub site: Option<String>,
}

fn default_bins() -> usize {
    10
}

fn default_threshold() -> f64 {
    0.5
}

fn default_per_directive() -> usize {
    2
}

impl Default for K2dConfig {
    fn default() -> Self {
        Self {
            n_bins: default_bins(),
            threshold: default_threshold(),
            trajectories_per_directive: default_per_directive(),
            site: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Sites whose data trains the foundation model.
    pub foundation_sites: Vec<String>,
    /// Site whose instance every setup adapts to.
    pub target_site: String,
    #[serde(default = "default_configs")]
    pub configs_per_round: usize,
    /// Configurations swept when the foundation model has to be built.
    #[serde(default = "default_configs")]
    pub foundation_configs: usize,
    /// Per-run epoch budget shared by every setup.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_layers")]
    pub n_recurrent_layers: usize,
    #[serde(default = "default_hidden")]
    pub hidden_size: usize,
    #[serde(default = "default_window")]
    pub sequence_length: usize,
}

fn default_epochs() -> usize {
    HyperParams::default().epochs
}

fn default_layers() -> usize {
    HyperParams::default().n_recurrent_layers
}

fn default_hidden() -> usize {
    HyperParams::default().hidden_size
}

fn default_window() -> usize {
    HyperParams::default().sequence_length
}

fn default_store() -> Endpoint {
    Endpoint::Local(PathBuf::from("d2k-data/store"))
}

fn default_sweep() -> Endpoint {
    Endpoint::Local(PathBuf::from("d2k-data/repo"))
}

fn default_report_dir() -> PathBuf {
    PathBuf::from("d2k-data/reports")
}

fn default_schedule() -> String {
    "0 2 * * *".to_string()
}

/// Everything a pipeline run needs. Relative paths resolve against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_store")]
    pub store: Endpoint,
    #[serde(default = "default_sweep")]
    pub sweep: Endpoint,
    /// Robot model file; the built-in 7-joint arm when absent.
    #[serde(default)]
    pub robot_model: Option<PathBuf>,
    #[serde(default = "default_report_dir")]
    pub report_dir: PathBuf,
    /// `minute hour * * *`; only daily schedules are supported.
    #[serde(default = "default_schedule")]
    pub schedule: String,
    #[serde(default)]
    pub seed: u64,
    /// Recorded on every generated record; the build's commit by default.
    #[serde(default)]
    pub software_commit: Option<String>,
    pub sites: Vec<SiteConfig>,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub k2d: K2dConfig,
    #[serde(default)]
    pub benchmark: Option<BenchmarkConfig>,
}

/// Commit of the build, or all zeros when it was built outside git.
pub fn build_commit() -> &'static str {
    option_env!("D2K_SOFTWARE_COMMIT").unwrap_or("0000000000000000000000000000000000000000")
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let config: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for ep in [&mut self.store, &mut self.sweep] {
            if let Endpoint::Local(p) | Endpoint::Unix(p) = ep {
                fix(p);
            }
        }
        if let Some(p) = self.robot_model.as_mut() {
            fix(p);
        }
        fix(&mut self.report_dir);
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.sites.is_empty() {
            return bad("at least one site is required".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for s in &self.sites {
            if !names.insert(s.name.as_str()) {
                return bad(format!("site `{}` is defined twice", s.name));
            }
            if s.name.is_empty() || s.name.contains(['/', '\\', '.']) || s.instance_id.is_empty() {
                return bad(format!("site `{}` needs a plain name and an instance_id", s.name));
            }
            for (what, r) in [("velocity_scaling", s.velocity_scaling), ("acceleration_scaling", s.acceleration_scaling)]
            {
                if !(r[0] > 0.0 && r[0] <= r[1] && r[1] <= 1.0) {
                    return bad(format!("site `{}`: {what} must satisfy 0 < lo <= hi <= 1", s.name));
                }
            }
            if s.n_waypoints < 2 || !(s.noise_sigma >= 0.0 && s.noise_sigma.is_finite()) {
                return bad(format!("site `{}`: n_waypoints >= 2 and noise_sigma >= 0 required", s.name));
            }
        }
        if let Some(commit) = &self.software_commit {
            if commit.is_empty() || !commit.chars().all(|c| c.is_ascii_hexdigit()) {
                return bad("software_commit must be a hex string".into());
            }
        }
        self.training.space.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.training.folds < 2 || self.training.configs_per_round == 0 || self.training.agents == 0 {
            return bad("training needs folds >= 2, configs_per_round >= 1 and agents >= 1".into());
        }
        if self.k2d.n_bins == 0 || !(self.k2d.threshold > 0.0) || self.k2d.trajectories_per_directive == 0 {
            return bad("k2d needs n_bins >= 1, threshold > 0 and trajectories_per_directive >= 1".into());
        }
        if let Some(site) = &self.k2d.site {
            self.site(site)?;
        }
        if let Some(b) = &self.benchmark {
            if b.foundation_sites.is_empty() {
                return bad("benchmark.foundation_sites must name at least one site".into());
            }
            for s in b.foundation_sites.iter().chain([&b.target_site]) {
                self.site(s)?;
            }
            if b.foundation_sites.contains(&b.target_site) {
                return bad("benchmark.target_site must not train the foundation model".into());
            }
            if b.configs_per_round == 0 || b.foundation_configs == 0 || b.epochs == 0 {
                return bad("benchmark budgets must be positive".into());
            }
        }
        Schedule::parse(&self.schedule)?;
        Ok(())
    }

    pub fn site(&self, name: &str) -> Result<&SiteConfig, PipelineError> {
        self.sites.iter().find(|s| s.name == name).ok_or_else(|| PipelineError::UnknownSite(name.to_string()))
    }

    pub fn robot(&self) -> Result<RobotModel, PipelineError> {
        match &self.robot_model {
            Some(path) => Ok(RobotModel::load(path)?),
            None => Ok(RobotModel::default_arm()),
        }
    }

    pub fn commit(&self) -> String {
        self.software_commit.clone().unwrap_or_else(|| build_commit().to_string())
    }
}

/// Daily trigger parsed from `minute hour * * *`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub minute: u32,
    pub hour: u32,
}

impl Schedule {
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let fields: Vec<&str> = text.split_whitespace().collect();
        let bad = || PipelineError::Config(format!("schedule `{text}` must look like `0 2 * * *`"));
        if fields.len() != 5 || fields[2..].iter().any(|f| *f != "*") {
            return Err(bad());
        }
        let minute: u32 = fields[0].parse().map_err(|_| bad())?;
        let hour: u32 = fields[1].parse().map_err(|_| bad())?;
        if minute > 59 || hour > 23 {
            return Err(bad());
        }
        Ok(Self { minute, hour })
    }

    /// First trigger strictly after `now` (UTC).
    pub fn next_after(&self, now: DateTime<Utc>) -> DateTime<Utc> {
        let today = now
            .with_hour(self.hour)
            .and_then(|t| t.with_minute(self.minute))
            .and_then(|t| t.with_second(0))
            .and_then(|t| t.with_nanosecond(0))
            .expect("valid wall-clock time");
        if today > now {
            today
        } else {
            today + Duration::days(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_parse_and_print() {
        for text in ["local:/tmp/store", "tcp://127.0.0.1:7400", "unix:///run/d2k.sock", "http://localhost:8080"] {
            assert_eq!(text.parse::<Endpoint>().unwrap().to_string(), text);
        }
        assert!("ftp://x".parse::<Endpoint>().is_err());
    }

    #[test]
    fn schedule_rolls_over_midnight() {
        let s = Schedule::parse("0 2 * * *").unwrap();
        let before = DateTime::parse_from_rfc3339("2024-03-01T01:59:00Z").unwrap().with_timezone(&Utc);
        let after = DateTime::parse_from_rfc3339("2024-03-01T02:00:00Z").unwrap().with_timezone(&Utc);
        assert_eq!(s.next_after(before).to_rfc3339(), "2024-03-01T02:00:00+00:00");
        assert_eq!(s.next_after(after).to_rfc3339(), "2024-03-02T02:00:00+00:00");
        assert!(Schedule::parse("*/5 * * * *").is_err());
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = PipelineConfig::from_toml_str("[[sites]]\nname = \"a\"\ninstance_id = \"arm-a\"\ntrain = 2\n").unwrap();
        assert_eq!(c.training.configs_per_round, 10);
        assert_eq!(c.sites[0].noise_sigma, 0.05);
        assert_eq!(c.schedule, "0 2 * * *");
        assert!(PipelineConfig::from_toml_str("sites = []").is_err());
    }
}
