//! Experiment runner for `uda-core`: TOML configs, dataset caches, result
//! CSVs, checkpoints and significance reports.

pub mod cache;
pub mod checkpoint;
pub mod config;
pub mod report;
pub mod results;
pub mod run;

pub use config::ExperimentConfig;
