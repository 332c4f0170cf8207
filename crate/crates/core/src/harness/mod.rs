//! Experiment orchestration: config files, presets, protocol × seed sweeps,
//! time-to-target summaries and the built-in self test.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod presets;
pub mod selftest;

pub use config::{parse_config, parse_config_str, ExperimentConfig};
pub use experiment::{run_experiment, write_outputs, ExperimentOutput};
pub use metrics::{centralized_ceiling, time_to_target, CeilingOptions, Summary, SummaryRow};
pub use selftest::run_self_test;
