//! Pipeline conductor: site data generation, the nightly training loop,
//! coverage-directed collection, the four-setup fine-tuning benchmark and
//! its CSV/SVG reports.
//!
//! Every operation talks to the store and the sweep coordinator through
//! [`StoreApi`] and [`SweepApi`], so the same code drives in-process
//! services and remote ones.

mod agent;
mod api;
mod bench;
mod config;
mod generate;
mod k2d;
mod nightly;
mod report;

pub use agent::{run_round, sequences_from_view, AgentRun, RoundOutcome, RunMode};
pub use api::{evaluation_hook, LocalStore, LocalSweep, StoreApi, SweepApi};
pub use bench::{run_benchmark, setup_assumption, BenchmarkResult, BenchmarkSummary, RunRecord, SETUP_ASSUMPTIONS};
pub use config::{
    build_commit, BenchmarkConfig, Endpoint, K2dConfig, PerturbationSpec, PipelineConfig, Schedule, SiteConfig,
    TrainingConfig,
};
pub use generate::{generate_records, run_site, GenerationFailure, SiteRun};
pub use k2d::{apply_directive, k2d_directives, CoverageDirective};
pub use nightly::{ensure_views, run_nightly, target_views, NightlyReport, StepOutcome, StepStatus, TargetViews};
pub use report::{
    read_mae_trend, read_runtime, render_boxplot_svg, render_report, render_trend_svg, write_report, MaeTrendRow,
    ReportFiles, RuntimeRow, SetupRow,
};

use thiserror::Error;

use crate::dynamics::DynamicsError;
use crate::learner::LearnerError;
use crate::store::StoreError;
use crate::sweep::SweepError;
use crate::trajectory::TrajectoryError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("unknown site `{0}`")]
    UnknownSite(String),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("sweep: {0}")]
    Sweep(#[from] SweepError),
    #[error("learner: {0}")]
    Learner(#[from] LearnerError),
    #[error("trajectory: {0}")]
    Trajectory(#[from] TrajectoryError),
    #[error("robot model: {0}")]
    Dynamics(#[from] DynamicsError),
    #[error("empty training view `{0}`")]
    EmptyTrainingView(String),
    #[error("joint {joint_index} histogram is empty")]
    DegenerateHistogram { joint_index: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no foundation model in the repository")]
    MissingFoundation,
    #[error("no report artifacts in {0}")]
    EmptyArtifacts(String),
    #[error("report: {0}")]
    Report(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
