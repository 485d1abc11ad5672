//! Monte Carlo verification harness and command line for spiked-model limits.

pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod output;
pub mod summary;
