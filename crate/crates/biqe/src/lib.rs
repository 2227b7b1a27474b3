//! Files, configuration and the command-line driver around `biqe-core`.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod format;
pub mod report;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
