//! Configuration parsing and mode dispatch behind the `hfd` binary.

pub mod config;
pub mod run;

pub use config::{parse_config, RunConfig};
pub use run::{execute, Outcome, RunError, RunOptions};
