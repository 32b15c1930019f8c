//! Data-to-knowledge pipeline for learned robot inverse dynamics.
//!
//! Simulated robot sites generate labeled trajectories, a shadow store keeps
//! them with FAIR metadata and task-specific views, a recurrent learner fits
//! torque models that a sweep coordinator gates into a model repository, and
//! the pipeline module conducts nightly runs, coverage-directed collection
//! and the fine-tuning benchmark.

pub mod dynamics;
pub mod fsutil;
pub mod learner;
pub mod pipeline;
pub mod store;
pub mod sweep;
pub mod trajectory;
pub mod wire;
