//! Command-line front end for the nlfr toolkit: configuration, data
//! ingestion, experiment runs and artifact emission.

pub mod commands;
pub mod config;
pub mod emit;
pub mod error;
pub mod ingest;

pub use config::{parse_config, CommandKind, Overrides, Provenance, RunConfig};
pub use error::{CliError, Result};
