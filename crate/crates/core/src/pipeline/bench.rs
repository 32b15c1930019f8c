use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::agent::load_sequences;
use super::{
    ensure_views, run_round, write_report, AgentRun, PipelineConfig, PipelineError, ReportFiles, RoundOutcome, RunMode,
    StoreApi, SweepApi,
};
use crate::learner::{HyperParams, LabeledSequence, ModelCheckpoint};
use crate::store::{DatasetQuery, Purpose};
use crate::sweep::{RoundSpec, SearchSpace, Setup, Target};

/// Setup definitions written into every benchmark report.
pub const SETUP_ASSUMPTIONS: [(Setup, &str); 4] = [
    (Setup::EndToEnd, "random initialization, all layer groups trained, learning-rate and batch-size sweep"),
    (
        Setup::FinetuneFoundation,
        "starts from the foundation best, trailing groups unfrozen (at least one frozen), fine-tune sweep",
    ),
    (
        Setup::FinetuneInstanceKnownHp,
        "starts from the instance best, reuses its stored hyperparameters (at least one group unfrozen), single run",
    ),
    (Setup::FinetuneInstanceUnknownHp, "starts from the instance best, fine-tune sweep"),
];

pub fn setup_assumption(setup: Setup) -> &'static str {
    SETUP_ASSUMPTIONS.iter().find(|(s, _)| *s == setup).map_or("", |(_, a)| a)
}

/// One run as it appears in the benchmark report.
pub type RunRecord = AgentRun;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub setup: Setup,
    pub round_id: String,
    pub parent_checkpoint: Option<String>,
    pub runs: Vec<RunRecord>,
    /// Sum of per-run training time; report rendering is excluded.
    pub total_wall_time_s: f64,
    pub best_cross_validation_loss: f64,
}

impl BenchmarkResult {
    fn from_round(setup: Setup, parent: Option<&ModelCheckpoint>, round: RoundOutcome) -> Result<Self, PipelineError> {
        if round.runs.is_empty() {
            let why = round.failures.first().map_or("no configuration was trained".to_string(), |(c, e)| format!("{c}: {e}"));
            return Err(PipelineError::InsufficientData(format!("setup {setup} produced no runs ({why})")));
        }
        Ok(Self {
            setup,
            round_id: round.round_id,
            parent_checkpoint: parent.map(|p| p.checkpoint_id.clone()),
            total_wall_time_s: round.runs.iter().map(|r| r.wall_time_s).sum(),
            best_cross_validation_loss: round.runs.iter().map(|r| r.cross_validation_loss).fold(f64::INFINITY, f64::min),
            runs: round.runs,
        })
    }

    pub fn mean_wall_time_s(&self) -> f64 {
        self.total_wall_time_s / self.runs.len() as f64
    }

    pub fn first_run_loss(&self) -> f64 {
        self.runs[0].cross_validation_loss
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub target: Target,
    pub foundation_checkpoint: String,
    /// Whether the foundation model was trained by this benchmark.
    pub foundation_built: bool,
    /// Checkpoint setups C and D started from, and the setup that produced it.
    pub instance_checkpoint: String,
    pub instance_origin: String,
    /// Mean over joints of `tau_max + max |tau|` on the target's data [N m].
    pub theoretical_max_mae: f64,
    /// Cross-validation folds behind every reported loss.
    pub folds: usize,
    pub results: Vec<BenchmarkResult>,
    pub files: Option<ReportFiles>,
}

impl BenchmarkSummary {
    pub fn result(&self, setup: Setup) -> &BenchmarkResult {
        self.results.iter().find(|r| r.setup == setup).expect("all four setups run")
    }
}

fn records_of(store: &dyn StoreApi, sites: &[String]) -> Result<Vec<LabeledSequence>, PipelineError> {
    let mut out = Vec::new();
    for purpose in [Purpose::Train, Purpose::Validation] {
        let mut q = DatasetQuery::purpose(purpose).with_sites(sites.iter().cloned());
        q.limit = None;
        out.extend(store.query(&q)?.iter().map(LabeledSequence::from_record));
    }
    Ok(out)
}

/// Runs the four training setups against the benchmark's target instance
/// and writes the report files. Runs execute serially so their wall times
/// are comparable; each timing covers only the train or fine-tune call.
pub fn run_benchmark(
    config: &PipelineConfig,
    store: &dyn StoreApi,
    sweep: &dyn SweepApi,
) -> Result<BenchmarkSummary, PipelineError> {
    let b = config.benchmark.as_ref().ok_or_else(|| PipelineError::Config("no [benchmark] section".into()))?;
    let target_site = config.site(&b.target_site)?;
    let target = Target::Instance(target_site.instance_id.clone());
    let robot = config.robot()?;

    let foundation_data = records_of(store, &b.foundation_sites)?;
    let instances: BTreeSet<String> = b
        .foundation_sites
        .iter()
        .map(|s| config.site(s).map(|s| s.instance_id.clone()))
        .collect::<Result<_, _>>()?;
    if foundation_data.is_empty() || instances.len() < 2 {
        return Err(PipelineError::InsufficientData(format!(
            "foundation needs data from at least two instances; found {} sequences from {} instance(s)",
            foundation_data.len(),
            instances.len()
        )));
    }
    let views = ensure_views(store, &target)?;
    let target_data = load_sequences(store, &[&views.train, &views.validation])?;
    if target_data.len() < config.training.folds {
        return Err(PipelineError::InsufficientData(format!(
            "target {target} has {} training sequences, {} folds need at least as many",
            target_data.len(),
            config.training.folds
        )));
    }
    let theoretical_max_mae = theoretical_max(&target_data, &robot.tau_max);
    let view_id = format!("{}+{}", views.train, views.validation);
    let folds = config.training.folds;

    let arch = HyperParams {
        n_recurrent_layers: b.n_recurrent_layers,
        hidden_size: b.hidden_size,
        sequence_length: b.sequence_length,
        epochs: b.epochs,
        ..HyperParams::default()
    };
    arch.validate()?;
    let mut sweep_space = SearchSpace::fixed(&arch);
    sweep_space.learning_rate = config.training.space.learning_rate;
    sweep_space.batch_size = config.training.space.batch_size.clone();
    let spec = |setup: Setup, space: SearchSpace, configs: usize, salt: u64| RoundSpec {
        target: target.clone(),
        setup,
        space,
        configs_per_round: configs,
        seed: Some(config.seed.wrapping_mul(31).wrapping_add(salt)),
        carry_over: true,
    };

    // Foundation model, trained here unless the repository holds one with
    // the benchmark architecture.
    let existing = sweep.best(&Target::Foundation)?;
    let compatible = existing.as_ref().is_some_and(|m| {
        m.hyperparams.n_recurrent_layers == arch.n_recurrent_layers
            && m.hyperparams.hidden_size == arch.hidden_size
            && m.hyperparams.sequence_length == arch.sequence_length
    });
    let foundation_built = !compatible;
    let foundation = if compatible {
        existing.expect("checked above")
    } else {
        log::info!("benchmark: training foundation model on {}", b.foundation_sites.join(", "));
        let mut s = spec(Setup::EndToEnd, sweep_space.clone(), b.foundation_configs, 0);
        s.target = Target::Foundation;
        s.carry_over = existing.is_none();
        let round = run_round(sweep, s, &RunMode::EndToEnd, &foundation_data, folds, "benchmark-foundation", 1)?;
        round.best.ok_or(PipelineError::MissingFoundation)?
    };
    let (foundation_ckpt, _) = sweep.checkpoint(&foundation.checkpoint_id)?;

    // A: the instance's history restarts so its best reflects this benchmark.
    log::info!("benchmark: setup {}", Setup::EndToEnd);
    let mut s = spec(Setup::EndToEnd, sweep_space.clone(), b.configs_per_round, 1);
    s.carry_over = false;
    let a = run_round(sweep, s, &RunMode::EndToEnd, &target_data, folds, &view_id, 1)?;
    let a = BenchmarkResult::from_round(Setup::EndToEnd, None, a)?;

    log::info!("benchmark: setup {}", Setup::FinetuneFoundation);
    let mode = RunMode::FineTune { parent: Box::new(foundation_ckpt.clone()) };
    let space = SearchSpace::finetune(&foundation_ckpt.hyperparams, b.epochs);
    let r = run_round(sweep, spec(Setup::FinetuneFoundation, space, b.configs_per_round, 2), &mode, &target_data, folds, &view_id, 1)?;
    let bres = BenchmarkResult::from_round(Setup::FinetuneFoundation, Some(&foundation_ckpt), r)?;

    // The instance model is whichever of A and B the gate kept.
    let instance = sweep.best(&target)?.ok_or_else(|| PipelineError::InsufficientData("no instance model".into()))?;
    let instance_origin = if a.runs.iter().any(|r| r.checkpoint_id == instance.checkpoint_id) {
        Setup::EndToEnd
    } else {
        Setup::FinetuneFoundation
    };
    let (instance_ckpt, _) = sweep.checkpoint(&instance.checkpoint_id)?;

    log::info!("benchmark: setup {}", Setup::FinetuneInstanceKnownHp);
    let mut known = instance.hyperparams.clone();
    known.unfrozen_layers = known.unfrozen_layers.max(1);
    known.epochs = b.epochs;
    let mode = RunMode::FineTune { parent: Box::new(instance_ckpt.clone()) };
    let r = run_round(sweep, spec(Setup::FinetuneInstanceKnownHp, SearchSpace::fixed(&known), 1, 3), &mode, &target_data, folds, &view_id, 1)?;
    let c = BenchmarkResult::from_round(Setup::FinetuneInstanceKnownHp, Some(&instance_ckpt), r)?;

    log::info!("benchmark: setup {}", Setup::FinetuneInstanceUnknownHp);
    let space = SearchSpace::finetune(&instance_ckpt.hyperparams, b.epochs);
    let r = run_round(sweep, spec(Setup::FinetuneInstanceUnknownHp, space, b.configs_per_round, 4), &mode, &target_data, folds, &view_id, 1)?;
    let d = BenchmarkResult::from_round(Setup::FinetuneInstanceUnknownHp, Some(&instance_ckpt), r)?;

    let mut summary = BenchmarkSummary {
        target,
        foundation_checkpoint: foundation.checkpoint_id,
        foundation_built,
        instance_checkpoint: instance.checkpoint_id,
        instance_origin: instance_origin.to_string(),
        theoretical_max_mae,
        folds,
        results: vec![a, bres, c, d],
        files: None,
    };
    summary.files = Some(write_report(&config.report_dir, &summary)?);
    Ok(summary)
}

fn theoretical_max(data: &[LabeledSequence], tau_max: &[f64]) -> f64 {
    let n = tau_max.len();
    let mut peak = vec![0.0f64; n];
    for s in data {
        for (k, t) in s.targets.iter().enumerate() {
            peak[k % n] = peak[k % n].max(t.abs());
        }
    }
    (0..n).map(|j| tau_max[j] + peak[j]).sum::<f64>() / n as f64
}
