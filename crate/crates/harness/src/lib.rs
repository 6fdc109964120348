//! Experiment runner for the rotated secure aggregation simulator: config
//! parsing, metrics files and bandwidth accounting.

pub mod bandwidth;
pub mod config;
pub mod error;
pub mod experiment;
pub mod metrics;

pub use bandwidth::{bandwidth_report, BandwidthReport};
pub use config::{AggregatorKind, ExperimentConfig, ModelChoice};
pub use error::HarnessError;
pub use experiment::{run_experiment, sweep};
pub use metrics::RoundMetrics;
