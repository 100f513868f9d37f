//! Command-line front end for the `mppde-core` solvers: dataset generation,
//! training, evaluation and the file formats they share.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod report;

pub use commands::{run, Cli};
pub use error::{CliError, Result};
