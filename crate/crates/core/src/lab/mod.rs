//! Experiment harness: configuration, seeded runs, the synthetic
//! perturbation study and cross-run reports.

pub mod config;
pub mod report;
pub mod runner;
pub mod stats;
pub mod study;

pub use config::{ConfigFile, ExperimentConfig, Mode, StudyBase, StudyConfig};
pub use report::{compare_report, Report};
pub use runner::{run, run_seed, RunOutcome, SeedOutcome};
pub use study::{synthetic_study, StudyRow};
