//! Computation graphs over [`Tensor`](crate::Tensor)s.
//!
//! Model code is written once against the [`Exec`] trait and runs on two
//! executors: [`Tape`] computes values and records a reverse-mode tape,
//! [`ShapeTracer`] propagates shapes only (so full-size configurations can
//! be checked without allocating their weights).

mod shapes;
mod tape;
mod trace;

pub use shapes::conv_out_extent;
pub use tape::{OpKind, Tape, Var};
pub use trace::{ShapeTracer, TraceRecord, TraceVar};

use crate::error::Result;
use crate::tensor::Tensor;

/// Code assigned to ground-truth pixels that carry no valid label.
pub const VOID: u8 = 255;

/// The operation set every executor provides.
///
/// Shape validation is shared by all executors, so a configuration that
/// traces cleanly also evaluates cleanly.
pub trait Exec {
    type V: Copy + core::fmt::Debug;

    fn shape(&self, v: Self::V) -> &[usize];

    /// Input that does not need a gradient.
    fn constant(&mut self, value: Tensor) -> Self::V;
    /// Leaf whose gradient is tracked (parameters, checked inputs).
    fn leaf(&mut self, value: Tensor) -> Self::V;
    fn zeros(&mut self, shape: &[usize]) -> Self::V;

    fn add(&mut self, a: Self::V, b: Self::V) -> Result<Self::V>;
    fn mul(&mut self, a: Self::V, b: Self::V) -> Result<Self::V>;
    /// Adds `bias[D]` to every row of `x[.., D]`.
    fn add_bias(&mut self, x: Self::V, bias: Self::V) -> Result<Self::V>;
    fn scale(&mut self, x: Self::V, factor: f64) -> Self::V;

    fn matmul(&mut self, a: Self::V, b: Self::V) -> Result<Self::V>;
    fn transpose(&mut self, x: Self::V) -> Result<Self::V>;
    fn softmax(&mut self, x: Self::V, axis: usize) -> Result<Self::V>;
    fn gelu(&mut self, x: Self::V) -> Self::V;
    fn relu(&mut self, x: Self::V) -> Self::V;
    /// Normalizes over the last axis, then applies `gamma` and `beta`.
    fn layer_norm(&mut self, x: Self::V, gamma: Self::V, beta: Self::V) -> Result<Self::V>;

    /// Cross-correlation of `x[C×H×W]` with `weight[Co×C×k×k]`.
    fn conv2d(
        &mut self,
        x: Self::V,
        weight: Self::V,
        bias: Option<Self::V>,
        stride: usize,
        pad: usize,
    ) -> Result<Self::V>;
    /// Adjoint of [`Exec::conv2d`]; `weight` is `[Ci×Co×k×k]`.
    fn conv_transpose2d(
        &mut self,
        x: Self::V,
        weight: Self::V,
        bias: Option<Self::V>,
        stride: usize,
        pad: usize,
    ) -> Result<Self::V>;

    fn slice_rows(&mut self, x: Self::V, start: usize, len: usize) -> Result<Self::V>;
    fn slice_cols(&mut self, x: Self::V, start: usize, len: usize) -> Result<Self::V>;
    /// Replicates row `row` of a matrix `n` times.
    fn repeat_row(&mut self, x: Self::V, row: usize, n: usize) -> Result<Self::V>;
    fn concat_rows(&mut self, a: Self::V, b: Self::V) -> Result<Self::V>;
    fn concat_cols(&mut self, a: Self::V, b: Self::V) -> Result<Self::V>;
    fn reshape(&mut self, x: Self::V, shape: &[usize]) -> Result<Self::V>;
    /// `[C×H×W]` to `[(H/p·W/p) × C·p·p]`, patches in row-major grid order.
    fn patchify(&mut self, x: Self::V, patch: usize) -> Result<Self::V>;

    fn sum(&mut self, x: Self::V) -> Self::V;
    /// Mean over non-void pixels of `-weights[c]·log softmax(logits)[c]`.
    /// An all-void mask yields zero.
    fn cross_entropy(&mut self, logits: Self::V, mask: &[u8], weights: &[f64]) -> Result<Self::V>;
}
