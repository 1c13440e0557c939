//! Command-line front end: file formats, config parsing and the
//! `fit`, `infer` and `simulate` commands.
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;

pub use error::{CliError, CliResult};
