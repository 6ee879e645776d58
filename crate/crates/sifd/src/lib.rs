//! Std companion to `sifd-core`: JSONL ingest, log-prob cache and score
//! table files, the parallel scoring pipeline, and the `sifd` command line.

pub mod cache_io;
pub mod commands;
pub mod config;
pub mod corpus_io;
mod error;
pub mod pipeline;
pub mod stats;
pub mod synth;
pub mod tables;

pub use config::{Budget, RunConfig};
pub use error::{Error, Result};
pub use pipeline::{score_dataset, ScoreOptions, ScoreRun};
pub use tables::ScoreTable;
