//! Std companion to `tsal-core`: series and feature file formats, benchmark
//! converters, experiment configuration, a rayon executor, the experiment
//! harness and report writer behind the `tsal` command.

pub mod config;
pub mod convert;
pub mod exec;
pub mod harness;
pub mod io;
pub mod report;

pub use tsal_core;
