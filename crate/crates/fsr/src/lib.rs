//! Image files, checkpoints, CSV reports and the command line around
//! `fsr-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
mod error;
pub mod imageio;
pub mod report;

pub use error::{Error, Result};
