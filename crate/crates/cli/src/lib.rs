//! Experiment runner for certified networked operators: data generation,
//! training, certification, evaluation and baseline comparison.

pub mod commands;
pub mod config;
pub mod error;

pub use config::ExperimentConfig;
pub use error::CliError;
