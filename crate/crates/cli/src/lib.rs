//! Experiment driver behind the `bvi` binary: dataset generation,
//! training, Monte Carlo evaluation and the three-variant comparison.

pub mod commands;
pub mod config;

pub use commands::{compare, exit_code, Comparison, Evaluation};
pub use config::ExperimentConfig;
