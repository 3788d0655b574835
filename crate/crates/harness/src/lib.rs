//! Dataset files, experiment configuration and the figure and table runners
//! behind the `hmimo` command-line tool.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod experiments;
pub mod report;

pub use config::ExperimentConfig;
pub use experiments::Runner;
pub use report::{Report, ReportRow};
