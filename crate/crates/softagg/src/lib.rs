//! Files, ingestion, sweeps and the `softagg` command-line tool built on
//! `softagg-core`.

pub mod archive;
pub mod cli;
pub mod config;
pub mod error;
pub mod ingest;
pub mod io;
pub mod sweep;

pub use error::{CliError, ExitCode, Result};
