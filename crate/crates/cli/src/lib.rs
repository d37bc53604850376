//! Batch experiments over the `rmtssl` library: configs in TOML, results
//! as CSV.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

pub use config::{ExperimentConfig, Overrides};
pub use error::{CliError, CliResult};
pub use experiments::Experiment;
