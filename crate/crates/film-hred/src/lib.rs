//! File formats, dataset loading and the commands behind the `film-hred`
//! binary. The model itself lives in `film-hred-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod features;
pub mod score;

pub use error::{Error, FormatError, Result};
