//! Library surface of the command-line binary: config parsing and the
//! subcommand implementations, exposed so integration tests can drive
//! whole runs in-process.

pub mod commands;
pub mod config;
