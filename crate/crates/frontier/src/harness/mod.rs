//! Configuration, run orchestration, and the CLI command implementations.
//!
//! A run is driven by one TOML config. Its canonical (key-sorted, fully
//! materialized) form is hashed with SHA-256 and that hash threads through
//! every artifact the run writes, so any output file can be traced back to
//! the exact configuration that produced it.

pub mod commands;
pub mod config;
pub mod record;

pub use commands::{
    cli_compare, cli_eval, cli_sweep, cli_train, cli_verify, run_experiment, VerifySummary,
};
pub use config::{canonical_toml, config_hash, load_config, RunConfig};
pub use record::{read_metrics, RunPaths, SeedDiagnostics};
