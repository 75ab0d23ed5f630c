//! Command-line front end of the `fehmm` two-scale solver.
//!
//! Commands read a flat `key = value` configuration, run the solver and
//! emit CSV tables and JSON summaries into an output directory.

pub mod commands;
pub mod config;
pub mod microstructure;
pub mod output;

pub use commands::{Axis, CliError, Outcome};
pub use config::{ConfigBuilder, ConfigError, Loading, ProblemKind, RunConfig};
pub use microstructure::{generate_microstructure, Generator};
