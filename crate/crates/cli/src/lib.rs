//! Command-line front end for `sidda-core`.
//!
//! Each subcommand of the `sidda` binary is a plain function here so that
//! runs can also be driven from tests and scripts: [`commands::cmd_gen`],
//! [`commands::cmd_train`], [`commands::cmd_eval`], [`commands::cmd_embed`]
//! and [`commands::cmd_compare`]. Runs are described by a [`RunConfig`] file
//! and write self-describing directories (config copy, manifest with file
//! hashes, per-seed checkpoints, histories and metrics, and an aggregate
//! report).

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use config::{ModelKind, RunConfig};
pub use error::{CliError, Result};
pub use report::{RunReport, SeedMetrics, Stat};
