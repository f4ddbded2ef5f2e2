//! Command-line driver: dataset generation, alignment, confidence, update and evaluation.

pub mod args;
pub mod commands;
pub mod config;

pub use args::{Cli, Command};
pub use commands::run;
