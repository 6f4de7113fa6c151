//! Experiment runner for masked-LM infilling.
//!
//! Generates gap tasks from a corpus, runs beam-search and sampling methods
//! against a configured backend, applies the mask-correction ablations, and
//! writes per-row records plus a per-method summary.

pub mod ablation;
pub mod config;
pub mod dataset;
pub mod experiment;
pub mod output;
pub mod sweep;
pub mod tasks;

pub use config::{Ablation, BackendSpec, ExperimentConfig, Method, SyntheticJoint};
pub use experiment::{run_experiment, ExperimentResult, MethodSummary, Row};
pub use tasks::{generate_tasks, InfillTask, TaskSet};
