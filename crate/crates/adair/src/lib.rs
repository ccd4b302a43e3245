//! File formats, configuration, checkpoints and the command line for
//! `adair-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod image;
pub mod manifest;
pub mod report;

pub use error::{Error, Result};
