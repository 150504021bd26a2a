//! Reverse-mode tape.

use alloc::vec;
use alloc::vec::Vec;

use super::shapes;
use super::{Exec, VOID};
use crate::error::{Error, Result};
use crate::kernels::{self, Window};
use crate::tensor::{numel, Tensor};

const LN_EPS: f64 = 1e-6;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation families, used to address a node kind from outside (fault
/// injection in gradient-check negative controls).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Add,
    Mul,
    AddBias,
    Scale,
    MatMul,
    Softmax,
    Gelu,
    Relu,
    LayerNorm,
    Conv2d,
    ConvTranspose2d,
    Gather,
    Concat,
    Reshape,
    Sum,
    CrossEntropy,
}

impl OpKind {
    pub const ALL: [OpKind; 16] = [
        OpKind::Add,
        OpKind::Mul,
        OpKind::AddBias,
        OpKind::Scale,
        OpKind::MatMul,
        OpKind::Softmax,
        OpKind::Gelu,
        OpKind::Relu,
        OpKind::LayerNorm,
        OpKind::Conv2d,
        OpKind::ConvTranspose2d,
        OpKind::Gather,
        OpKind::Concat,
        OpKind::Reshape,
        OpKind::Sum,
        OpKind::CrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::AddBias => "add_bias",
            OpKind::Scale => "scale",
            OpKind::MatMul => "matmul",
            OpKind::Softmax => "softmax",
            OpKind::Gelu => "gelu",
            OpKind::Relu => "relu",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Conv2d => "conv2d",
            OpKind::ConvTranspose2d => "conv_transpose2d",
            OpKind::Gather => "gather",
            OpKind::Concat => "concat",
            OpKind::Reshape => "reshape",
            OpKind::Sum => "sum",
            OpKind::CrossEntropy => "cross_entropy",
        }
    }
}

impl core::str::FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Usage(alloc::format!("unknown op kind {s}")))
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    Gelu(Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        win: Window,
    },
    ConvT {
        x: Var,
        w: Var,
        b: Option<Var>,
        win: Window,
    },
    /// `out[i] = x[index[i]]`; covers slicing, transposition, replication
    /// and patch extraction.
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    ConcatRows(Var, Var),
    ConcatCols(Var, Var),
    Reshape(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        target: Vec<u8>,
        weights: Vec<f64>,
        count: usize,
    },
}

impl Op {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Scale(..) => OpKind::Scale,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::Gelu(_) => OpKind::Gelu,
            Op::Relu(_) => OpKind::Relu,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Conv { .. } => OpKind::Conv2d,
            Op::ConvT { .. } => OpKind::ConvTranspose2d,
            Op::Gather { .. } => OpKind::Gather,
            Op::ConcatRows(..) | Op::ConcatCols(..) => OpKind::Concat,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Sum(_) => OpKind::Sum,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        })
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

/// Records every operation of one forward pass; [`Tape::backward`] replays
/// it in reverse. Gradients land in each node's tensor `grad` buffer.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<(OpKind, f64)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Scales every input gradient produced by ops of `kind` by `factor`.
    /// Exists so gradient checks can prove they detect a broken backward.
    pub fn inject_gradient_fault(&mut self, kind: OpKind, factor: f64) {
        self.fault = Some((kind, factor));
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Takes the tensor out of the node, including its gradient buffer.
    pub fn take(&mut self, v: Var) -> Tensor {
        core::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(0.0))
    }

    /// Hash of which ReLU inputs are positive. Two forward passes with equal
    /// patterns lie on the same smooth piece of the recorded function.
    pub fn activation_pattern(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                for &v in self.data(x) {
                    h ^= u64::from(v > 0.0);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Leaf => false,
            _ => inputs.iter().any(|&v| self.needs(v)),
        };
        self.nodes.push(Node { value, needs_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).expect("shape rules guarantee consistent buffers")
    }

    fn gather(&mut self, x: Var, shape: &[usize], index: Vec<usize>) -> Var {
        let src = self.data(x);
        let data = index.iter().map(|&i| src[i]).collect();
        let value = Self::tensor(shape, data);
        self.push(value, Op::Gather { x, index }, &[x])
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.nodes[output.0].value.numel() != 1 {
            return Err(Error::shape("backward", self.nodes[output.0].value.shape(), &[1]));
        }
        for node in &mut self.nodes {
            node.value.take_grad();
        }
        self.nodes[output.0].value.set_grad(vec![1.0])?;
        for i in (0..=output.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(upstream) = self.nodes[i].value.take_grad() else {
                continue;
            };
            let mut contributions = self.node_backward(i, &upstream);
            self.nodes[i].value.set_grad(upstream)?;
            if let (Some((kind, factor)), Some(k)) = (self.fault, self.nodes[i].op.kind()) {
                if kind == k {
                    for (_, g) in &mut contributions {
                        g.iter_mut().for_each(|v| *v *= factor);
                    }
                }
            }
            for (target, g) in contributions {
                let value = &mut self.nodes[target.0].value;
                match value.take_grad() {
                    Some(mut acc) => {
                        acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                        value.set_grad(acc)?;
                    }
                    None => value.set_grad(g)?,
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, i: usize, dy: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let y = node.value.data();
        let mut out = Vec::new();
        let mut emit = |v: Var, f: &dyn Fn() -> Vec<f64>| {
            if self.needs(v) {
                out.push((v, f()));
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                emit(*a, &|| dy.to_vec());
                emit(*b, &|| dy.to_vec());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                emit(*a, &|| dy.iter().zip(bv).map(|(g, b)| g * b).collect());
                emit(*b, &|| dy.iter().zip(av).map(|(g, a)| g * a).collect());
            }
            Op::AddBias(x, b) => {
                emit(*x, &|| dy.to_vec());
                emit(*b, &|| {
                    let d = self.value(*b).numel();
                    let mut g = vec![0.0; d];
                    for row in dy.chunks(d) {
                        g.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                    }
                    g
                });
            }
            Op::Scale(x, c) => emit(*x, &|| dy.iter().map(|g| g * c).collect()),
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[1];
                emit(*a, &|| {
                    let mut g = vec![0.0; m * k];
                    kernels::mm_nt(dy, self.data(*b), &mut g, m, n, k);
                    g
                });
                emit(*b, &|| {
                    let mut g = vec![0.0; k * n];
                    kernels::mm_tn(self.data(*a), dy, &mut g, k, m, n);
                    g
                });
            }
            Op::Softmax { x, axis } => emit(*x, &|| {
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                let mut g = vec![0.0; y.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let at = |t: usize| (o * len + t) * inner + j;
                        let s: f64 = (0..len).map(|t| dy[at(t)] * y[at(t)]).sum();
                        for t in 0..len {
                            g[at(t)] = y[at(t)] * (dy[at(t)] - s);
                        }
                    }
                }
                g
            }),
            Op::Gelu(x) => emit(*x, &|| {
                self.data(*x)
                    .iter()
                    .zip(dy)
                    .map(|(&v, g)| g * (kernels::normal_cdf(v) + v * kernels::normal_pdf(v)))
                    .collect()
            }),
            Op::Relu(x) => emit(*x, &|| {
                self.data(*x)
                    .iter()
                    .zip(dy)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect()
            }),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = self.value(*gamma).numel();
                let gam = self.data(*gamma);
                emit(*x, &|| {
                    let mut g = vec![0.0; xhat.len()];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let rows = r * d..(r + 1) * d;
                        let (xh, gy) = (&xhat[rows.clone()], &dy[rows.clone()]);
                        let dxh: Vec<f64> = gy.iter().zip(gam).map(|(a, b)| a * b).collect();
                        let mean_dxh = dxh.iter().sum::<f64>() / d as f64;
                        let mean_dxh_xh = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for ((o, &dv), &h) in g[rows].iter_mut().zip(&dxh).zip(xh) {
                            *o = rs * (dv - mean_dxh - h * mean_dxh_xh);
                        }
                    }
                    g
                });
                emit(*gamma, &|| {
                    let mut g = vec![0.0; d];
                    for (row, xr) in dy.chunks(d).zip(xhat.chunks(d)) {
                        for ((a, r), h) in g.iter_mut().zip(row).zip(xr) {
                            *a += r * h;
                        }
                    }
                    g
                });
                emit(*beta, &|| {
                    let mut g = vec![0.0; d];
                    for row in dy.chunks(d) {
                        g.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                    }
                    g
                });
            }
            Op::Conv { x, w, b, win } => {
                let co = self.value(*w).shape()[0];
                let (rows, cols) = (win.rows(), win.cols());
                emit(*w, &|| {
                    let mut colbuf = vec![0.0; rows * cols];
                    kernels::im2col(self.data(*x), win, &mut colbuf);
                    let mut g = vec![0.0; co * rows];
                    kernels::mm_nt(dy, &colbuf, &mut g, co, cols, rows);
                    g
                });
                emit(*x, &|| {
                    let mut dcols = vec![0.0; rows * cols];
                    kernels::mm_tn(self.data(*w), dy, &mut dcols, rows, co, cols);
                    let mut g = vec![0.0; self.value(*x).numel()];
                    kernels::col2im(&dcols, win, &mut g);
                    g
                });
                if let Some(b) = b {
                    emit(*b, &|| dy.chunks(cols).map(|c| c.iter().sum()).collect());
                }
            }
            Op::ConvT { x, w, b, win } => {
                let ci = self.value(*w).shape()[0];
                let (rows, cols) = (win.rows(), win.cols());
                // dy has the window's input geometry: unfold it.
                let unfold = || {
                    let mut c = vec![0.0; rows * cols];
                    kernels::im2col(dy, win, &mut c);
                    c
                };
                emit(*x, &|| {
                    let dcols = unfold();
                    let mut g = vec![0.0; ci * cols];
                    kernels::mm(self.data(*w), &dcols, &mut g, ci, rows, cols);
                    g
                });
                emit(*w, &|| {
                    let dcols = unfold();
                    let mut g = vec![0.0; ci * rows];
                    kernels::mm_nt(self.data(*x), &dcols, &mut g, ci, cols, rows);
                    g
                });
                if let Some(b) = b {
                    let plane = win.height * win.width;
                    emit(*b, &|| dy.chunks(plane).map(|c| c.iter().sum()).collect());
                }
            }
            Op::Gather { x, index } => emit(*x, &|| {
                let mut g = vec![0.0; self.value(*x).numel()];
                for (&ix, &d) in index.iter().zip(dy) {
                    g[ix] += d;
                }
                g
            }),
            Op::ConcatRows(a, b) => {
                let split = self.value(*a).numel();
                emit(*a, &|| dy[..split].to_vec());
                emit(*b, &|| dy[split..].to_vec());
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).shape()[1];
                let cb = self.value(*b).shape()[1];
                emit(*a, &|| {
                    dy.chunks(ca + cb).flat_map(|r| r[..ca].iter().copied()).collect()
                });
                emit(*b, &|| {
                    dy.chunks(ca + cb).flat_map(|r| r[ca..].iter().copied()).collect()
                });
            }
            Op::Reshape(x) => emit(*x, &|| dy.to_vec()),
            Op::Sum(x) => emit(*x, &|| vec![dy[0]; self.value(*x).numel()]),
            Op::CrossEntropy {
                logits,
                probs,
                target,
                weights,
                count,
            } => emit(*logits, &|| {
                let pixels = target.len();
                let mut g = vec![0.0; probs.len()];
                if *count == 0 {
                    return g;
                }
                for (p, &t) in target.iter().enumerate() {
                    if t == VOID {
                        continue;
                    }
                    let scale = dy[0] * weights[t as usize] / *count as f64;
                    for c in 0..weights.len() {
                        let onehot = if c == t as usize { 1.0 } else { 0.0 };
                        g[c * pixels + p] = scale * (probs[c * pixels + p] - onehot);
                    }
                }
                g
            }),
        }
        out
    }
}

/// `(outer, axis extent, inner)` strides for reducing along `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Exec for Tape {
    type V = Var;

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    fn leaf(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf, &[]);
        self.nodes[v.0].needs_grad = true;
        v
    }

    fn zeros(&mut self, shape: &[usize]) -> Var {
        self.constant(Tensor::zeros(shape))
    }

    fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = shapes::same("add", self.shape(a), self.shape(b))?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(Self::tensor(&shape, data), Op::Add(a, b), &[a, b]))
    }

    fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = shapes::same("mul", self.shape(a), self.shape(b))?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        Ok(self.push(Self::tensor(&shape, data), Op::Mul(a, b), &[a, b]))
    }

    fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let shape = shapes::add_bias(self.shape(x), self.shape(bias))?;
        let b = self.data(bias);
        let mut data = self.data(x).to_vec();
        for row in data.chunks_mut(b.len()) {
            row.iter_mut().zip(b).for_each(|(r, v)| *r += v);
        }
        Ok(self.push(Self::tensor(&shape, data), Op::AddBias(x, bias), &[x, bias]))
    }

    fn scale(&mut self, x: Var, factor: f64) -> Var {
        let shape = self.shape(x).to_vec();
        let data = self.data(x).iter().map(|v| v * factor).collect();
        self.push(Self::tensor(&shape, data), Op::Scale(x, factor), &[x])
    }

    fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = shapes::matmul(self.shape(a), self.shape(b))?;
        let k = self.shape(a)[1];
        let mut data = vec![0.0; shape[0] * shape[1]];
        kernels::mm(self.data(a), self.data(b), &mut data, shape[0], k, shape[1]);
        Ok(self.push(Self::tensor(&shape, data), Op::MatMul(a, b), &[a, b]))
    }

    fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = shapes::matrix("transpose", self.shape(x))?;
        let index = (0..c).flat_map(|j| (0..r).map(move |i| i * c + j)).collect();
        Ok(self.gather(x, &[c, r], index))
    }

    fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        shapes::axis("softmax", self.shape(x), axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.data(x);
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for j in 0..inner {
                let at = |t: usize| (o * len + t) * inner + j;
                let max = (0..len).map(|t| src[at(t)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for t in 0..len {
                    let e = libm::exp(src[at(t)] - max);
                    data[at(t)] = e;
                    total += e;
                }
                for t in 0..len {
                    data[at(t)] /= total;
                }
            }
        }
        Ok(self.push(Self::tensor(&shape, data), Op::Softmax { x, axis }, &[x]))
    }

    fn gelu(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let data = self.data(x).iter().map(|&v| v * kernels::normal_cdf(v)).collect();
        self.push(Self::tensor(&shape, data), Op::Gelu(x), &[x])
    }

    fn relu(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let data = self.data(x).iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        self.push(Self::tensor(&shape, data), Op::Relu(x), &[x])
    }

    fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = shapes::add_bias(self.shape(x), self.shape(gamma))?;
        shapes::same("layer_norm", self.shape(gamma), self.shape(beta))?;
        let d = self.value(gamma).numel();
        let (g, b) = (self.data(gamma), self.data(beta));
        let src = self.data(x);
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = Vec::with_capacity(src.len() / d);
        let mut data = vec![0.0; src.len()];
        for ((row, xh), out) in src.chunks(d).zip(xhat.chunks_mut(d)).zip(data.chunks_mut(d)) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / libm::sqrt(var + LN_EPS);
            rstd.push(rs);
            for i in 0..d {
                xh[i] = (row[i] - mean) * rs;
                out[i] = xh[i] * g[i] + b[i];
            }
        }
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        };
        Ok(self.push(Self::tensor(&shape, data), op, &[x, gamma, beta]))
    }

    fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let bshape = bias.map(|b| self.shape(b).to_vec());
        let win = shapes::conv2d(self.shape(x), self.shape(weight), bshape.as_deref(), stride, pad)?;
        let co = self.shape(weight)[0];
        let (rows, cols) = (win.rows(), win.cols());
        let mut colbuf = vec![0.0; rows * cols];
        kernels::im2col(self.data(x), &win, &mut colbuf);
        let mut data = vec![0.0; co * cols];
        if let Some(b) = bias {
            for (plane, &bv) in data.chunks_mut(cols).zip(self.data(b)) {
                plane.fill(bv);
            }
        }
        kernels::mm(self.data(weight), &colbuf, &mut data, co, rows, cols);
        let shape = [co, win.out_height, win.out_width];
        let inputs: Vec<Var> = [x, weight].into_iter().chain(bias).collect();
        Ok(self.push(
            Self::tensor(&shape, data),
            Op::Conv {
                x,
                w: weight,
                b: bias,
                win,
            },
            &inputs,
        ))
    }

    fn conv_transpose2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let bshape = bias.map(|b| self.shape(b).to_vec());
        let win = shapes::conv_transpose2d(self.shape(x), self.shape(weight), bshape.as_deref(), stride, pad)?;
        let ci = self.shape(weight)[0];
        let (rows, cols) = (win.rows(), win.cols());
        let mut colbuf = vec![0.0; rows * cols];
        kernels::mm_tn(self.data(weight), self.data(x), &mut colbuf, rows, ci, cols);
        let plane = win.height * win.width;
        let mut data = vec![0.0; win.channels * plane];
        kernels::col2im(&colbuf, &win, &mut data);
        if let Some(b) = bias {
            for (p, &bv) in data.chunks_mut(plane).zip(self.data(b)) {
                p.iter_mut().for_each(|v| *v += bv);
            }
        }
        let shape = [win.channels, win.height, win.width];
        let inputs: Vec<Var> = [x, weight].into_iter().chain(bias).collect();
        Ok(self.push(
            Self::tensor(&shape, data),
            Op::ConvT {
                x,
                w: weight,
                b: bias,
                win,
            },
            &inputs,
        ))
    }

    fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = shapes::matrix("slice_rows", self.shape(x))?;
        shapes::slice("slice_rows", r, start, len)?;
        let index = (start * c..(start + len) * c).collect();
        Ok(self.gather(x, &[len, c], index))
    }

    fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = shapes::matrix("slice_cols", self.shape(x))?;
        shapes::slice("slice_cols", c, start, len)?;
        let index = (0..r)
            .flat_map(|i| (start..start + len).map(move |j| i * c + j))
            .collect();
        Ok(self.gather(x, &[r, len], index))
    }

    fn repeat_row(&mut self, x: Var, row: usize, n: usize) -> Result<Var> {
        let (r, c) = shapes::matrix("repeat_row", self.shape(x))?;
        shapes::slice("repeat_row", r, row, 1)?;
        if n == 0 {
            return Err(Error::shape("repeat_row", &[r, c], &[0]));
        }
        let index = (0..n).flat_map(|_| row * c..(row + 1) * c).collect();
        Ok(self.gather(x, &[n, c], index))
    }

    fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = shapes::matrix("concat_rows", self.shape(a))?;
        let (rb, cb) = shapes::matrix("concat_rows", self.shape(b))?;
        if ca != cb {
            return Err(Error::shape("concat_rows", self.shape(a), self.shape(b)));
        }
        let data = self.data(a).iter().chain(self.data(b)).copied().collect();
        Ok(self.push(Self::tensor(&[ra + rb, ca], data), Op::ConcatRows(a, b), &[a, b]))
    }

    fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = shapes::matrix("concat_cols", self.shape(a))?;
        let (rb, cb) = shapes::matrix("concat_cols", self.shape(b))?;
        if ra != rb {
            return Err(Error::shape("concat_cols", self.shape(a), self.shape(b)));
        }
        let (da, db) = (self.data(a), self.data(b));
        let data = (0..ra)
            .flat_map(|i| {
                da[i * ca..(i + 1) * ca]
                    .iter()
                    .chain(&db[i * cb..(i + 1) * cb])
                    .copied()
            })
            .collect();
        Ok(self.push(Self::tensor(&[ra, ca + cb], data), Op::ConcatCols(a, b), &[a, b]))
    }

    fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).numel() || shape.contains(&0) {
            return Err(Error::shape("reshape", self.shape(x), shape));
        }
        let data = self.data(x).to_vec();
        Ok(self.push(Self::tensor(shape, data), Op::Reshape(x), &[x]))
    }

    fn patchify(&mut self, x: Var, patch: usize) -> Result<Var> {
        let (c, gh, gw) = shapes::patchify(self.shape(x), patch)?;
        let (h, w) = (gh * patch, gw * patch);
        let mut index = Vec::with_capacity(c * h * w);
        for gy in 0..gh {
            for gx in 0..gw {
                for ch in 0..c {
                    for py in 0..patch {
                        let row = (ch * h + gy * patch + py) * w + gx * patch;
                        index.extend(row..row + patch);
                    }
                }
            }
        }
        Ok(self.gather(x, &[gh * gw, c * patch * patch], index))
    }

    fn sum(&mut self, x: Var) -> Var {
        let total = self.data(x).iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    fn cross_entropy(&mut self, logits: Var, mask: &[u8], weights: &[f64]) -> Result<Var> {
        let (classes, pixels) = shapes::cross_entropy(self.shape(logits), mask.len(), weights.len())?;
        if let Some(&bad) = mask.iter().find(|&&m| m != VOID && m as usize >= classes) {
            return Err(Error::config(alloc::format!("mask code {bad} outside class range")));
        }
        let src = self.data(logits);
        let mut probs = vec![0.0; src.len()];
        let mut total = 0.0;
        let mut count = 0usize;
        for p in 0..pixels {
            let max = (0..classes)
                .map(|c| src[c * pixels + p])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..classes {
                let e = libm::exp(src[c * pixels + p] - max);
                probs[c * pixels + p] = e;
                z += e;
            }
            for c in 0..classes {
                probs[c * pixels + p] /= z;
            }
            let t = mask[p];
            if t != VOID {
                let log_prob = src[t as usize * pixels + p] - max - libm::log(z);
                total -= weights[t as usize] * log_prob;
                count += 1;
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let op = Op::CrossEntropy {
            logits,
            probs,
            target: mask.to_vec(),
            weights: weights.to_vec(),
            count,
        };
        Ok(self.push(Tensor::scalar(loss), op, &[logits]))
    }
}
