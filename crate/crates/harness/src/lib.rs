//! Training, evaluation and experiment harness for compliant peg insertion:
//! configuration files, checkpoints, CSV metrics, plots and the `peginsert`
//! command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod metrics;
pub mod plot;
pub mod train;

pub use error::{HarnessError, Result};
