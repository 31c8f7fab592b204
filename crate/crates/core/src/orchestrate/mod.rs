//! Experiment configuration, seed management, the parallel sweep, the results
//! store and aggregation into report files.

pub mod aggregate;
pub mod config;
pub mod store;
pub mod suite;

pub use aggregate::{aggregate, write_report, Aggregate, AggregateError};
pub use config::{ConfigError, ExperimentConfig, Setting};
pub use store::{ResultStore, RunKey, StoreError};
pub use suite::{run_suite, SuiteError, SuiteFilter, SuiteSummary};

use crate::rng;

/// Setting name under which Baseline runs are stored.
pub const BASELINE_SETTING: &str = "none";

/// Seed of world `index`; it also seeds every run trained in that world.
pub fn world_seed(master_seed: u64, index: usize) -> u64 {
    rng::derive_seed(master_seed, &[rng::label("world"), index as u64])
}
