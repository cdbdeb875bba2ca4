//! Config-driven command runner for the phenotyping pipeline.

mod commands;
mod config;
mod error;

pub use commands::{execute, parse_truth, write_truth, Command, VERSION};
pub use config::{CheckpointChoice, GoldSource, Head, ModelWidths, Paths, RunConfig};
pub use error::CliError;
