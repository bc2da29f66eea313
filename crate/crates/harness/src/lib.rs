//! Everything around the training math: the task corpus, experiment
//! configuration, the end-to-end runner, held-out evaluation and reporting.

pub mod config;
pub mod corpus;
pub mod eval;
pub mod experiment;
pub mod report;

pub use config::{ExperimentConfig, ExperimentKind};
pub use eval::{EvalReport, TaskEval};
pub use experiment::{run_experiment, RunOptions, RunSummary};
