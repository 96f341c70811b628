//! Command-line front end for the entropic optimal transport trainer:
//! config parsing, experiment runners, and plot/CSV artifact writers.
//! The binary in `main.rs` is a thin shell over this crate so the
//! integration suite can drive full experiments in-process.

pub mod config;
pub mod runner;
pub mod svg;
