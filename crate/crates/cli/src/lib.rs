//! Library surface of the CLI: run configuration parsing and merging.

pub mod config;
