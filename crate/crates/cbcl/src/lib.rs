//! File formats, experiment driver and command-line interface for
//! [`cbcl_core`].

pub mod cli;
pub mod error;
pub mod experiment;
pub mod features;
pub mod model_file;
pub mod scenes;

pub use error::{Error, FormatIssue, Location, Result};
