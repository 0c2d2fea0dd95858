//! Synthetic data, Monte Carlo experiments and the `ppsi` command line.

pub mod cli;
pub mod config;
pub mod data;
mod error;
pub mod experiments;
pub mod io;

pub use error::{HarnessError, Result};
