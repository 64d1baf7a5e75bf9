//! File formats and subcommands behind the `lsbe` binary.

pub mod commands;
pub mod error;
pub mod manifest;
pub mod mm;
pub mod trace;

pub use error::CliError;
