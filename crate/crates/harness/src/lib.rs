//! Experiment harness for the UAV AoI simulator: TOML experiment specs,
//! seeded sweeps, CSV metrics and plot series.

pub mod error;
pub mod metrics;
pub mod runner;
pub mod spec;
pub mod summary;

pub use error::{HarnessError, Result};
pub use metrics::MetricsRow;
pub use runner::{run, run_point, RunOptions, RunOutput};
pub use spec::{ExperimentSpec, PolicyKind, SweepAxis};
