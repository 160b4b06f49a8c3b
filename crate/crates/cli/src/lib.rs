//! Command-line front end for `ksmooth-core`: file formats, configuration
//! and the `smooth`, `tune`, `simulate` and `bench` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use commands::{run, Cli, Command};
pub use error::{CliError, CliResult};
