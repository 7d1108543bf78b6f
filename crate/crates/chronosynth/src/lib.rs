//! File formats, metrics and run drivers around `chronosynth-core`.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod imageio;
pub mod metrics;
pub mod report;
pub mod run;

pub use chronosynth_core as core;
pub use error::{Error, Result};
