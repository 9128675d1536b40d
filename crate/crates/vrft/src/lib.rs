//! File formats, experiment recipes, the `vrft` CLI's plumbing and the HTTP
//! scoring service around `vrft-core`.

pub mod config;
pub mod dataset;
pub mod knowledge;
pub mod runner;
pub mod scoring;
pub mod service;

pub use config::{Experiment, RunConfig};
pub use runner::{run, RunError, RunSummary};
pub use scoring::{score_file, Presets, ScoreItem};
