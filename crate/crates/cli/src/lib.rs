//! Command-line front end: configuration, CSV ingestion and the `fit`,
//! `forecast`, `caa`, `synth` and `check` commands.

pub mod check;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;

pub use commands::{run, Artifact, Command, Outcome};
pub use config::{OutputFormat, RunConfig};
pub use error::{CliError, CliResult};
