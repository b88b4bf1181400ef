//! Artifact layer around `retro-core`: experiment config files, binary
//! checkpoints, metrics CSV, evaluation reports, and the pipeline stages
//! the CLI drives.
//!
//! The split keeps the math engine free of filesystem and platform
//! concerns; everything that touches a file lives here.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod metrics;
pub mod report;
pub mod stages;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
