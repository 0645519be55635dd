//! Command-line driver for `semhawkes`: every subcommand is a library function
//! that reads files and writes an output directory with a manifest.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

pub use artifacts::{Checkpoint, RunManifest, CHECKPOINT_FILE, MANIFEST_FILE};
pub use commands::*;
pub use config::{MissingStrategy, RunConfig};
pub use error::{CliError, EXIT_INPUT, EXIT_NUMERICAL};
