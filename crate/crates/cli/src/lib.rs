//! Batch front end for projected Polya tree experiments: dataset
//! ingestion, run manifests, experiment drivers and synthetic data.

pub mod dataset;
pub mod error;
pub mod manifest;
pub mod runs;
pub mod synth;

pub use error::{CliError, Result};
