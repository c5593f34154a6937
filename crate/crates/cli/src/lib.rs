//! Experiment driver for deep-ensemble Gaussian processes: configuration,
//! datasets, experiment runners and reproducible output directories.

pub mod config;
pub mod datasets;
pub mod error;
pub mod experiments;
pub mod output;
