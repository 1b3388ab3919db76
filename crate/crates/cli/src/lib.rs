//! File formats, configuration and subcommands of the `aerodeblur` tool.

pub mod app;
pub mod config;
pub mod error;
pub mod io;

pub use error::CliError;
