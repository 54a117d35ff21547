//! Simulation runner, file formats and command-line front end for
//! [`cmi_cusum_core`].
//!
//! The `cmi-cusum` binary has three subcommands: `simulate` writes patient
//! streams, `monitor` runs one monitor over a stream, and `experiment` runs
//! replicated experiments in parallel.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod runner;

pub use error::{AppError, AppResult};
