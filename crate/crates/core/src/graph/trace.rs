//! Shape-only executor.

use alloc::vec;
use alloc::vec::Vec;

use super::shapes;
use super::Exec;
use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceVar(usize);

/// One traced node: the operation name and its output shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub op: &'static str,
    pub shape: Vec<usize>,
}

/// Propagates shapes through the same code paths as [`Tape`](super::Tape)
/// without touching any data. Leaves may be declared by shape alone.
#[derive(Debug, Default)]
pub struct ShapeTracer {
    records: Vec<TraceRecord>,
}

impl ShapeTracer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn input(&mut self, shape: &[usize]) -> TraceVar {
        self.push("input", shape.to_vec())
    }

    fn push(&mut self, op: &'static str, shape: Vec<usize>) -> TraceVar {
        self.records.push(TraceRecord { op, shape });
        TraceVar(self.records.len() - 1)
    }
}

impl Exec for ShapeTracer {
    type V = TraceVar;

    fn shape(&self, v: TraceVar) -> &[usize] {
        &self.records[v.0].shape
    }

    fn constant(&mut self, value: Tensor) -> TraceVar {
        self.push("constant", value.shape().to_vec())
    }

    fn leaf(&mut self, value: Tensor) -> TraceVar {
        self.push("leaf", value.shape().to_vec())
    }

    fn zeros(&mut self, shape: &[usize]) -> TraceVar {
        self.push("zeros", shape.to_vec())
    }

    fn add(&mut self, a: TraceVar, b: TraceVar) -> Result<TraceVar> {
        let s = shapes::same("add", self.shape(a), self.shape(b))?;
        Ok(self.push("add", s))
    }

    fn mul(&mut self, a: TraceVar, b: TraceVar) -> Result<TraceVar> {
        let s = shapes::same("mul", self.shape(a), self.shape(b))?;
        Ok(self.push("mul", s))
    }

    fn add_bias(&mut self, x: TraceVar, bias: TraceVar) -> Result<TraceVar> {
        let s = shapes::add_bias(self.shape(x), self.shape(bias))?;
        Ok(self.push("add_bias", s))
    }

    fn scale(&mut self, x: TraceVar, _factor: f64) -> TraceVar {
        let s = self.shape(x).to_vec();
        self.push("scale", s)
    }

    fn matmul(&mut self, a: TraceVar, b: TraceVar) -> Result<TraceVar> {
        let s = shapes::matmul(self.shape(a), self.shape(b))?;
        Ok(self.push("matmul", s))
    }

    fn transpose(&mut self, x: TraceVar) -> Result<TraceVar> {
        let (r, c) = shapes::matrix("transpose", self.shape(x))?;
        Ok(self.push("transpose", vec![c, r]))
    }

    fn softmax(&mut self, x: TraceVar, axis: usize) -> Result<TraceVar> {
        shapes::axis("softmax", self.shape(x), axis)?;
        let s = self.shape(x).to_vec();
        Ok(self.push("softmax", s))
    }

    fn gelu(&mut self, x: TraceVar) -> TraceVar {
        let s = self.shape(x).to_vec();
        self.push("gelu", s)
    }

    fn relu(&mut self, x: TraceVar) -> TraceVar {
        let s = self.shape(x).to_vec();
        self.push("relu", s)
    }

    fn layer_norm(&mut self, x: TraceVar, gamma: TraceVar, beta: TraceVar) -> Result<TraceVar> {
        let s = shapes::add_bias(self.shape(x), self.shape(gamma))?;
        shapes::same("layer_norm", self.shape(gamma), self.shape(beta))?;
        Ok(self.push("layer_norm", s))
    }

    fn conv2d(
        &mut self,
        x: TraceVar,
        weight: TraceVar,
        bias: Option<TraceVar>,
        stride: usize,
        pad: usize,
    ) -> Result<TraceVar> {
        let b = bias.map(|b| self.shape(b).to_vec());
        let win = shapes::conv2d(self.shape(x), self.shape(weight), b.as_deref(), stride, pad)?;
        let co = self.shape(weight)[0];
        Ok(self.push("conv2d", vec![co, win.out_height, win.out_width]))
    }

    fn conv_transpose2d(
        &mut self,
        x: TraceVar,
        weight: TraceVar,
        bias: Option<TraceVar>,
        stride: usize,
        pad: usize,
    ) -> Result<TraceVar> {
        let b = bias.map(|b| self.shape(b).to_vec());
        let win = shapes::conv_transpose2d(self.shape(x), self.shape(weight), b.as_deref(), stride, pad)?;
        Ok(self.push("conv_transpose2d", vec![win.channels, win.height, win.width]))
    }

    fn slice_rows(&mut self, x: TraceVar, start: usize, len: usize) -> Result<TraceVar> {
        let (r, c) = shapes::matrix("slice_rows", self.shape(x))?;
        shapes::slice("slice_rows", r, start, len)?;
        Ok(self.push("slice_rows", vec![len, c]))
    }

    fn slice_cols(&mut self, x: TraceVar, start: usize, len: usize) -> Result<TraceVar> {
        let (r, c) = shapes::matrix("slice_cols", self.shape(x))?;
        shapes::slice("slice_cols", c, start, len)?;
        Ok(self.push("slice_cols", vec![r, len]))
    }

    fn repeat_row(&mut self, x: TraceVar, row: usize, n: usize) -> Result<TraceVar> {
        let (r, c) = shapes::matrix("repeat_row", self.shape(x))?;
        shapes::slice("repeat_row", r, row, 1)?;
        if n == 0 {
            return Err(Error::shape("repeat_row", &[r, c], &[0]));
        }
        Ok(self.push("repeat_row", vec![n, c]))
    }

    fn concat_rows(&mut self, a: TraceVar, b: TraceVar) -> Result<TraceVar> {
        let (ra, ca) = shapes::matrix("concat_rows", self.shape(a))?;
        let (rb, cb) = shapes::matrix("concat_rows", self.shape(b))?;
        if ca != cb {
            return Err(Error::shape("concat_rows", self.shape(a), self.shape(b)));
        }
        Ok(self.push("concat_rows", vec![ra + rb, ca]))
    }

    fn concat_cols(&mut self, a: TraceVar, b: TraceVar) -> Result<TraceVar> {
        let (ra, ca) = shapes::matrix("concat_cols", self.shape(a))?;
        let (rb, cb) = shapes::matrix("concat_cols", self.shape(b))?;
        if ra != rb {
            return Err(Error::shape("concat_cols", self.shape(a), self.shape(b)));
        }
        Ok(self.push("concat_cols", vec![ra, ca + cb]))
    }

    fn reshape(&mut self, x: TraceVar, shape: &[usize]) -> Result<TraceVar> {
        if numel(shape) != numel(self.shape(x)) || shape.contains(&0) {
            return Err(Error::shape("reshape", self.shape(x), shape));
        }
        Ok(self.push("reshape", shape.to_vec()))
    }

    fn patchify(&mut self, x: TraceVar, patch: usize) -> Result<TraceVar> {
        let (c, gh, gw) = shapes::patchify(self.shape(x), patch)?;
        Ok(self.push("patchify", vec![gh * gw, c * patch * patch]))
    }

    fn sum(&mut self, _x: TraceVar) -> TraceVar {
        self.push("sum", vec![1])
    }

    fn cross_entropy(&mut self, logits: TraceVar, mask: &[u8], weights: &[f64]) -> Result<TraceVar> {
        shapes::cross_entropy(self.shape(logits), mask.len(), weights.len())?;
        Ok(self.push("cross_entropy", vec![1]))
    }
}
