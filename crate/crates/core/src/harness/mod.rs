//! Experiment orchestration: configuration, world generation, paired runs
//! and reports.

mod config;
mod experiment;
mod report;
mod world;

pub use config::{ExperimentConfig, ObserverKind};
pub use experiment::{run_experiment, run_experiment_with_jobs, Experiment};
pub use report::{
    binomial_ci, write_report, ObserverOutcome, ObserverSummary, Report, ReportFlags, ReportFormat, TrialRecord,
    WorldSummary,
};
pub use world::{generate_world, sample_target, Target, World};
