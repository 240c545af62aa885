//! Config-driven experiments: TOML configs, runs, artifacts and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
mod run;

pub use checkpoint::Checkpoint;
pub use config::ExperimentConfig;
pub use run::*;
