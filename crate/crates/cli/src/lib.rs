//! Command-line driver: configuration, command execution and reporting.

pub mod config;
pub mod error;
pub mod report;
pub mod run;

pub use config::{Cli, Command, Flags, RunConfig};
pub use error::CliError;
