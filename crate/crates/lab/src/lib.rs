//! Configuration, persistence and reporting around `cdp-core`.

pub mod benchmark;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod report;
pub mod run;

pub use config::{load_config, parse_config, ExperimentConfig, ExperimentKind};
pub use error::{ConfigError, RunError};
pub use run::run_experiment;
