//! Batch experiment runner for `tiltlab-core`.
//!
//! A run reads a `key = value` config, expands one master seed into
//! per-trial seeds with `Seed::child`, runs trials on a worker pool, and
//! writes `<kind>.csv` plus `manifest.txt`. Rows are merged by trial index,
//! so output does not depend on the worker count.

pub mod config;
pub mod error;
pub mod experiments;
pub mod runner;

pub use config::{parse_config, ExperimentConfig, ExperimentKind};
pub use error::{CliError, Result};
pub use experiments::{header, Experiment, TrialRow};
pub use runner::{replay, run, run_config_file, ReplayOutcome, RunOptions, RunSummary};

/// Environment overrides; only the seed and the output directory are honored.
pub const ENV_SEED: &str = "TILTLAB_SEED";
pub const ENV_OUT: &str = "TILTLAB_OUT";
