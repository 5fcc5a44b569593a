//! Experiments: configs, interventions, instruments, the run loop and the
//! metric report.

pub mod config;
pub mod intervention;
pub mod interview;
pub mod metrics;
pub mod recorder;
pub mod report;
pub mod route;
pub mod sim;
pub mod survey;

pub use config::{ConfigError, ExperimentConfig};
pub use sim::{run_experiment, SimError, Simulation};
