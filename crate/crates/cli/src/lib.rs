//! Experiment harness and file formats behind the `sdwsn` binary.

pub mod config;
pub mod experiments;
pub mod imageio;
pub mod report;
pub mod store;
pub mod svg;

pub use config::{ExperimentConfig, Format};
pub use experiments::{run, RunReport};
