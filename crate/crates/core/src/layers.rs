//! Parameterized building blocks shared by the encoder and decoder.

use alloc::format;

use crate::error::Result;
use crate::graph::Exec;
use crate::params::{Init, ParamSink};

/// `x · W + b` with `W` stored as `[in × out]`.
#[derive(Debug, Clone)]
pub struct Linear<V> {
    pub weight: V,
    pub bias: V,
}

impl<V: Copy> Linear<V> {
    pub fn declare<S: ParamSink<V = V>>(
        s: &mut S,
        name: &str,
        input: usize,
        output: usize,
        init: Init,
    ) -> Result<Self> {
        Ok(Linear {
            weight: s.param(&format!("{name}.weight"), &[input, output], init)?,
            bias: s.param(&format!("{name}.bias"), &[output], Init::Zeros)?,
        })
    }

    pub fn forward<E: Exec<V = V>>(&self, e: &mut E, x: V) -> Result<V> {
        let y = e.matmul(x, self.weight)?;
        e.add_bias(y, self.bias)
    }
}

#[derive(Debug, Clone)]
pub struct Norm<V> {
    pub gamma: V,
    pub beta: V,
}

impl<V: Copy> Norm<V> {
    pub fn declare<S: ParamSink<V = V>>(s: &mut S, name: &str, dim: usize) -> Result<Self> {
        Ok(Norm {
            gamma: s.param(&format!("{name}.gamma"), &[dim], Init::Ones)?,
            beta: s.param(&format!("{name}.beta"), &[dim], Init::Zeros)?,
        })
    }

    pub fn forward<E: Exec<V = V>>(&self, e: &mut E, x: V) -> Result<V> {
        e.layer_norm(x, self.gamma, self.beta)
    }
}

/// Truncated-normal init scaled by fan-in.
pub fn fan_in_init(fan_in: usize, gain: f64) -> Init {
    Init::TruncNormal(gain / libm::sqrt(fan_in as f64))
}

#[derive(Debug, Clone)]
pub struct Conv2d<V> {
    pub weight: V,
    pub bias: Option<V>,
    pub stride: usize,
    pub pad: usize,
}

/// Window geometry of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub input: usize,
    pub output: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl<V: Copy> Conv2d<V> {
    pub fn declare<S: ParamSink<V = V>>(
        s: &mut S,
        name: &str,
        shape: ConvShape,
        bias: bool,
        init: Init,
    ) -> Result<Self> {
        let ConvShape {
            input,
            output,
            kernel,
            stride,
            pad,
        } = shape;
        Ok(Conv2d {
            weight: s.param(&format!("{name}.weight"), &[output, input, kernel, kernel], init)?,
            bias: if bias {
                Some(s.param(&format!("{name}.bias"), &[output], Init::Zeros)?)
            } else {
                None
            },
            stride,
            pad,
        })
    }

    pub fn forward<E: Exec<V = V>>(&self, e: &mut E, x: V) -> Result<V> {
        e.conv2d(x, self.weight, self.bias, self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d<V> {
    pub weight: V,
    pub bias: Option<V>,
    pub stride: usize,
    pub pad: usize,
}

impl<V: Copy> ConvTranspose2d<V> {
    pub fn declare<S: ParamSink<V = V>>(
        s: &mut S,
        name: &str,
        shape: ConvShape,
        bias: bool,
        init: Init,
    ) -> Result<Self> {
        let ConvShape {
            input,
            output,
            kernel,
            stride,
            pad,
        } = shape;
        Ok(ConvTranspose2d {
            weight: s.param(&format!("{name}.weight"), &[input, output, kernel, kernel], init)?,
            bias: if bias {
                Some(s.param(&format!("{name}.bias"), &[output], Init::Zeros)?)
            } else {
                None
            },
            stride,
            pad,
        })
    }

    pub fn forward<E: Exec<V = V>>(&self, e: &mut E, x: V) -> Result<V> {
        e.conv_transpose2d(x, self.weight, self.bias, self.stride, self.pad)
    }
}
