//! Few-shot anomaly scoring over precomputed token embeddings.

pub mod adam;
pub mod archive;
pub mod checkpoint;
pub mod cli;
mod codec;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod grad;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod train;

pub use error::{FateError, Result};
