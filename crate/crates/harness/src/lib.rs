//! Experiment harness: config loading, the CLI commands and the
//! verification checks.

pub mod ablate;
pub mod config;
pub mod error;
pub mod experiment;
pub mod verify;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use verify::{Check, Verdict};
