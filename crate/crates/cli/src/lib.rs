//! Library surface of the `tscert` command-line tool: configuration
//! schema, run manifests, table writers, and the five pipeline commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod tables;

pub use error::{CliError, ExitCode};
