//! Library half of the `so2` command-line tool: run configuration and the
//! subcommand bodies.

pub mod commands;
pub mod config;
pub mod error;
