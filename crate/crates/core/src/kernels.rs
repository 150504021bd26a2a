//! Raw numeric kernels on flat row-major buffers.
//!
//! All routines accumulate into `out` and run sequentially in a fixed
//! order, so results are bitwise reproducible.

const COLUMN_BLOCK: usize = 256;
const ROW_BLOCK: usize = 4;

/// Shared blocked kernel: `out[i][j] += Σ_p a(i, p) · b[p][j]`, summing over
/// `p` in ascending order for every output element.
#[inline(always)]
fn mm_blocked(a: impl Fn(usize, usize) -> f64, b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for j0 in (0..n).step_by(COLUMN_BLOCK) {
        let j1 = (j0 + COLUMN_BLOCK).min(n);
        let mut i = 0;
        while i + ROW_BLOCK <= m {
            let (r0, rest) = out[i * n..(i + ROW_BLOCK) * n].split_at_mut(n);
            let (r1, rest) = rest.split_at_mut(n);
            let (r2, r3) = rest.split_at_mut(n);
            let (r0, r1, r2, r3) = (&mut r0[j0..j1], &mut r1[j0..j1], &mut r2[j0..j1], &mut r3[j0..j1]);
            for p in 0..k {
                let (s0, s1, s2, s3) = (a(i, p), a(i + 1, p), a(i + 2, p), a(i + 3, p));
                let brow = &b[p * n + j0..p * n + j1];
                for (t, &bv) in brow.iter().enumerate() {
                    r0[t] += s0 * bv;
                    r1[t] += s1 * bv;
                    r2[t] += s2 * bv;
                    r3[t] += s3 * bv;
                }
            }
            i += ROW_BLOCK;
        }
        for i in i..m {
            let row = &mut out[i * n + j0..i * n + j1];
            for p in 0..k {
                let s = a(i, p);
                let brow = &b[p * n + j0..p * n + j1];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += s * bv;
                }
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub fn mm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    mm_blocked(|i, p| a[i * k + p], b, out, m, k, n);
}

/// `out[m×n] += aᵀ · b` with `a` stored as `[k×m]` and `b` as `[k×n]`.
pub fn mm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    mm_blocked(|i, p| a[p * m + i], b, out, m, k, n);
}

/// `out[m×n] += a · bᵀ` with `a` stored as `[m×k]` and `b` as `[n×k]`.
pub fn mm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let mut bt = alloc::vec![0.0; k * n];
    for j in 0..n {
        for p in 0..k {
            bt[p * n + j] = b[j * k + p];
        }
    }
    mm(a, &bt, out, m, k, n);
}

/// Geometry of a 2-D sliding window over a `channels × height × width` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl Window {
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.out_height * self.out_width
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds `x` into `[C·k·k × Ho·Wo]` patch columns (zero padded).
pub fn im2col(x: &[f64], win: &Window, cols: &mut [f64]) {
    debug_assert_eq!(cols.len(), win.rows() * win.cols());
    if win.is_pointwise() {
        cols.copy_from_slice(x);
        return;
    }
    let (h, w) = (win.height as isize, win.width as isize);
    let ncols = win.cols();
    for c in 0..win.channels {
        let plane = &x[c * win.height * win.width..(c + 1) * win.height * win.width];
        for ky in 0..win.kernel {
            for kx in 0..win.kernel {
                let row = (c * win.kernel + ky) * win.kernel + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..win.out_height {
                    let iy = (oy * win.stride + ky) as isize - win.pad as isize;
                    let line = &mut dst[oy * win.out_width..(oy + 1) * win.out_width];
                    if iy < 0 || iy >= h {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * win.width..(iy as usize + 1) * win.width];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * win.stride + kx) as isize - win.pad as isize;
                        *d = if ix < 0 || ix >= w { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds patch columns back onto `x`.
pub fn col2im(cols: &[f64], win: &Window, x: &mut [f64]) {
    debug_assert_eq!(cols.len(), win.rows() * win.cols());
    if win.is_pointwise() {
        for (d, s) in x.iter_mut().zip(cols) {
            *d += s;
        }
        return;
    }
    let (h, w) = (win.height as isize, win.width as isize);
    let ncols = win.cols();
    for c in 0..win.channels {
        let plane = &mut x[c * win.height * win.width..(c + 1) * win.height * win.width];
        for ky in 0..win.kernel {
            for kx in 0..win.kernel {
                let row = (c * win.kernel + ky) * win.kernel + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..win.out_height {
                    let iy = (oy * win.stride + ky) as isize - win.pad as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let line = &src[oy * win.out_width..(oy + 1) * win.out_width];
                    let dst = &mut plane[iy as usize * win.width..(iy as usize + 1) * win.width];
                    for (ox, &s) in line.iter().enumerate() {
                        let ix = (ox * win.stride + kx) as isize - win.pad as isize;
                        if ix >= 0 && ix < w {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * libm::exp(-0.5 * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn matmul_variants_agree() {
        let a: alloc::vec::Vec<f64> = (0..6).map(|v| v as f64 - 2.5).collect(); // 2x3
        let b: alloc::vec::Vec<f64> = (0..12).map(|v| (v as f64) * 0.5).collect(); // 3x4
        let mut c = vec![0.0; 8];
        mm(&a, &b, &mut c, 2, 3, 4);
        // aᵀ stored as 3x2
        let at = [a[0], a[3], a[1], a[4], a[2], a[5]];
        let mut c2 = vec![0.0; 8];
        mm_tn(&at, &b, &mut c2, 2, 3, 4);
        // bᵀ stored as 4x3
        let mut bt = vec![0.0; 12];
        for i in 0..3 {
            for j in 0..4 {
                bt[j * 3 + i] = b[i * 4 + j];
            }
        }
        let mut c3 = vec![0.0; 8];
        mm_nt(&a, &bt, &mut c3, 2, 3, 4);
        assert_eq!(c, c2);
        for (x, y) in c.iter().zip(&c3) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let win = Window {
            channels: 2,
            height: 5,
            width: 4,
            kernel: 3,
            stride: 2,
            pad: 1,
            out_height: 3,
            out_width: 2,
        };
        let x: alloc::vec::Vec<f64> = (0..40).map(|v| libm::sin(v as f64)).collect();
        let y: alloc::vec::Vec<f64> = (0..win.rows() * win.cols())
            .map(|v| libm::cos(v as f64 * 0.7))
            .collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, &win, &mut cols);
        let mut back = vec![0.0; 40];
        col2im(&y, &win, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
