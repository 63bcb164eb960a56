//! Experiment configuration, orchestration and file output.

pub mod config;
pub mod experiment;
pub mod output;
pub mod robots;

pub use config::{load_config, Experiment, ExperimentConfig};
pub use experiment::{residual_histogram, run_experiment, run_single, sweep_perturbation};
pub use output::{emit_outputs, OutputDir};
pub use robots::RobotConfig;
