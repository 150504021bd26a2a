//! Camera–LiDAR fusion transformer for semantic segmentation.
//!
//! The crate is `no_std` (with `alloc`): it carries the tensor engine,
//! geometry, model, training loop and metrics. File formats, the CLI and
//! wall-clock timing live in the `clft` companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod assemble;
pub mod config;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod geometry;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod params;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use graph::{Exec, ShapeTracer, Tape, Var};
pub use tensor::Tensor;
