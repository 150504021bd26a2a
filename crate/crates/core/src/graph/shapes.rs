use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::Window;

pub(crate) fn same(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a != b {
        return Err(Error::shape(op, a, b));
    }
    Ok(a.to_vec())
}

pub(crate) fn matrix(op: &'static str, s: &[usize]) -> Result<(usize, usize)> {
    match *s {
        [r, c] => Ok((r, c)),
        _ => Err(Error::shape(op, s, &[0, 0])),
    }
}

pub(crate) fn matmul(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let (m, k) = matrix("matmul", a)?;
    let (k2, n) = matrix("matmul", b)?;
    if k != k2 {
        return Err(Error::shape("matmul", a, b));
    }
    Ok(vec![m, n])
}

pub(crate) fn add_bias(x: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if b.len() != 1 || x.last() != b.first() {
        return Err(Error::shape("add_bias", x, b));
    }
    Ok(x.to_vec())
}

pub(crate) fn axis(op: &'static str, x: &[usize], axis: usize) -> Result<()> {
    if axis >= x.len() {
        return Err(Error::shape(op, x, &[axis]));
    }
    Ok(())
}

/// Output extent of a strided window; zero or non-integral extents are
/// configuration errors.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(Error::config("kernel and stride must be positive"));
    }
    let span = input + 2 * pad;
    if span < kernel {
        return Err(Error::config(format!("kernel {kernel} exceeds padded extent {span}")));
    }
    if !(span - kernel).is_multiple_of(stride) {
        return Err(Error::config(format!(
            "non-integral output extent: ({input} + 2·{pad} - {kernel}) / {stride}"
        )));
    }
    Ok((span - kernel) / stride + 1)
}

fn map3(op: &'static str, s: &[usize]) -> Result<(usize, usize, usize)> {
    match *s {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::shape(op, s, &[0, 0, 0])),
    }
}

fn kernel4(op: &'static str, s: &[usize]) -> Result<(usize, usize, usize)> {
    match *s {
        [a, b, k, k2] if k == k2 => Ok((a, b, k)),
        _ => Err(Error::shape(op, s, &[0, 0, 0, 0])),
    }
}

fn check_bias(op: &'static str, bias: Option<&[usize]>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b != [channels] => Err(Error::shape(op, b, &[channels])),
        _ => Ok(()),
    }
}

pub(crate) fn conv2d(x: &[usize], w: &[usize], bias: Option<&[usize]>, stride: usize, pad: usize) -> Result<Window> {
    let (c, h, wd) = map3("conv2d", x)?;
    let (co, ci, k) = kernel4("conv2d", w)?;
    if ci != c {
        return Err(Error::shape("conv2d", x, w));
    }
    check_bias("conv2d", bias, co)?;
    Ok(Window {
        channels: c,
        height: h,
        width: wd,
        kernel: k,
        stride,
        pad,
        out_height: conv_out_extent(h, k, stride, pad)?,
        out_width: conv_out_extent(wd, k, stride, pad)?,
    })
}

/// Window of the forward convolution whose adjoint this transposed
/// convolution is: the window's input is the transposed output.
pub(crate) fn conv_transpose2d(
    x: &[usize],
    w: &[usize],
    bias: Option<&[usize]>,
    stride: usize,
    pad: usize,
) -> Result<Window> {
    let (ci, h, wd) = map3("conv_transpose2d", x)?;
    let (ci2, co, k) = kernel4("conv_transpose2d", w)?;
    if ci != ci2 {
        return Err(Error::shape("conv_transpose2d", x, w));
    }
    check_bias("conv_transpose2d", bias, co)?;
    if stride == 0 {
        return Err(Error::config("stride must be positive"));
    }
    let extent = |n: usize| -> Result<usize> {
        let full = (n - 1) * stride + k;
        if full <= 2 * pad {
            return Err(Error::config(format!(
                "transposed convolution output is empty for extent {n}"
            )));
        }
        Ok(full - 2 * pad)
    };
    Ok(Window {
        channels: co,
        height: extent(h)?,
        width: extent(wd)?,
        kernel: k,
        stride,
        pad,
        out_height: h,
        out_width: wd,
    })
}

pub(crate) fn slice(op: &'static str, extent: usize, start: usize, len: usize) -> Result<()> {
    if len == 0 || start + len > extent {
        return Err(Error::shape(op, &[extent], &[start, len]));
    }
    Ok(())
}

pub(crate) fn patchify(x: &[usize], p: usize) -> Result<(usize, usize, usize)> {
    let (c, h, w) = map3("patchify", x)?;
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::config(format!(
            "image extents {h}x{w} are not divisible by patch size {p}"
        )));
    }
    Ok((c, h / p, w / p))
}

pub(crate) fn cross_entropy(logits: &[usize], mask: usize, weights: usize) -> Result<(usize, usize)> {
    let (c, h, w) = map3("cross_entropy", logits)?;
    if mask != h * w {
        return Err(Error::shape("cross_entropy", logits, &[mask]));
    }
    if weights != c {
        return Err(Error::shape("cross_entropy", logits, &[weights]));
    }
    Ok((c, h * w))
}
