//! Command-line campaigns: dataset preparation, attack grids, evaluation
//! summaries and reports.

pub mod cli;
pub mod commands;
pub mod config;
pub mod layout;
pub mod manifest;
pub mod plot;
pub mod prepare;

/// Environment variable that roots relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "IC2VQA_OUTPUT_ROOT";
