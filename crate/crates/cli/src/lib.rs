//! Driver for simulated and file-based calibrate-and-reconstruct runs.
//!
//! Every command is deterministic for a given configuration and seed: the
//! same inputs produce byte-identical outputs.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use cli::{run, Cli};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
