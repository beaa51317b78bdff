//! Command-line driver for the `lart` pipeline.
//!
//! The binary is a thin wrapper; everything it does is reachable through
//! [`commands`] so integration tests can drive whole pipelines in-process.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod keys;
pub mod manifest;
pub mod plots;
