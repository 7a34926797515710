//! Seeded experiment runner around `strategic-core`.
//!
//! An [`ExperimentConfig`] names an algorithm, a scenario and a master seed.
//! [`run_experiment`] runs independent replications, each on its own
//! environment seeded from `(seed, replication)`, and returns one
//! [`ResultRow`] per replication (per alpha for sweeps). [`output`] writes rows
//! as CSV or JSON plus a manifest describing the run.

pub mod config;
pub mod error;
pub mod output;
pub mod runner;

pub use config::{AlgorithmParams, ExperimentConfig, ZoParams};
pub use error::{LabError, Result};
pub use runner::{load_scenario, run_experiment, Cell, ResultRow, RunOutput, TraceRow};

/// Version of the output row and manifest layout.
pub const OUTPUT_SCHEMA_VERSION: u32 = 1;
