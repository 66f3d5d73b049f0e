//! Library side of the `coneflow` binary: config parsing, bundle output and subcommands.

pub mod bundle;
pub mod commands;
pub mod config;

pub use commands::{EXIT_CONFIG, EXIT_MONITOR, EXIT_OK, EXIT_SINGULAR};
