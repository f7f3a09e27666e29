//! Command-line front end for `fundet`: job configuration, execution,
//! output rendering and parallel sweeps.

pub mod args;
pub mod config;
pub mod error;
pub mod jobs;
pub mod output;
pub mod sweep;

pub use args::{run_cli, CliOutcome};
pub use config::JobConfig;
pub use error::JobError;
