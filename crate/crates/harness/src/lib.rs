//! Experiment harness around the ctxcorr analysis library: deterministic
//! ensemble generation, scatter/trend/selection studies, file outputs with
//! digests, and the command-line interface.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod generate;
pub mod output;
pub mod stats;
pub mod verify;

pub use config::EnsembleConfig;
pub use error::{HarnessError, Result};
