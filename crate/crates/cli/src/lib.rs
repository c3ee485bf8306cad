//! Reproducible experiment runner for `qloc`.
//!
//! Each subcommand reads one JSON config, runs a seeded pipeline and writes
//! its artifacts (CSV, JSON, SVG, matrix dumps) plus a `manifest.json` that
//! echoes the fully resolved config and its content hash. Passing a
//! manifest back as `--config` reruns the same pipeline.

pub mod commands;
pub mod config;

pub use commands::{execute, resolve, run, Artifact, Command, Outcome, RunError, RunOptions};
pub use config::{parse_config, ConfigSource, ExperimentConfig, Manifest};

/// Environment variable overriding the output directory (below `--out`).
pub const OUT_ENV: &str = "QLOC_OUT";
