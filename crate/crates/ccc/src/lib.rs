//! File formats, configuration and command-line front end for `ccc-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use error::{CliError, Result};
