//! Config-driven experiments: parse a TOML config, run its task, write CSVs
//! and a manifest.

mod config;
mod run;

pub use config::{apply_override, ExperimentConfig, Task};
pub use run::{run_experiment, workers_from_env, RunManifest, WORKERS_ENV};
