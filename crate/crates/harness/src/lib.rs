//! Experiment harness: configuration, artifact I/O, the end-to-end pipeline
//! and the ice-coverage sweep.

pub mod config;
pub mod io;
pub mod pipeline;
pub mod score;
pub mod stats;
pub mod svg;
pub mod sweep;
