//! File formats, dataset and checkpoint directories, the timing harness and
//! the `clft` command line, built on `clft-core`.

pub mod bench;
pub mod checkpoint;
pub mod commands;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod images;
pub mod run_config;
pub mod tensor_io;

pub use error::{Error, Result};
