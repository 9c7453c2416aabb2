//! Experiment configuration, the parallel trial runner, and result files.

pub mod config;
pub mod output;
pub mod run;

pub use config::{ExperimentConfig, Setting, Workers};
pub use output::write_outputs;
pub use run::{build_setup, run_experiment, run_trial, ExperimentResult, ExperimentSetup};
