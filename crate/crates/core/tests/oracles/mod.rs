//! Brute-force reference implementations, written independently of the
//! library's loops. Shared by the integration and acceptance tests.
#![allow(dead_code)]

use clft_core::geometry::{project_to_image, transform_to_camera, Box3D, PlaneStack, PointCloud, SensorRig};
use clft_core::Tensor;

pub const VOID: u8 = 255;

/// Pixel-major population: for every pixel, scan all points and keep the
/// nearest (earliest on equal depth) one that lands there.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn populate(cloud: &PointCloud, rig: &SensorRig) -> PlaneStack {
    let cam = transform_to_camera(cloud, rig);
    let proj = project_to_image(&cam, rig);
    let (w, h) = rig.resolution;
    let mut out = PlaneStack::empty(w, h);
    for row in 0..h {
        for col in 0..w {
            let mut best: Option<usize> = None;
            for (i, p) in proj.iter().enumerate() {
                if p.behind || !(p.depth > 1e-6) {
                    continue;
                }
                if !(p.u >= 0.0 && p.u < w as f64 && p.v >= 0.0 && p.v < h as f64) {
                    continue;
                }
                if p.u.floor() as usize != col || p.v.floor() as usize != row {
                    continue;
                }
                if best.is_none_or(|b| p.depth < proj[b].depth) {
                    best = Some(i);
                }
            }
            if let Some(b) = best {
                let k = row * w + col;
                let q = cam.points[b];
                out.xy[k] = q[0];
                out.yz[k] = q[1];
                out.xz[k] = q[2];
                out.occupied[k] = true;
            }
        }
    }
    out
}

/// Dilation by exhaustive search over the whole grid.
pub fn densify(planes: &PlaneStack, radius: usize) -> PlaneStack {
    let (w, h) = (planes.width, planes.height);
    let mut out = planes.clone();
    for k in 0..w * h {
        if planes.occupied[k] {
            continue;
        }
        let (r0, c0) = ((k / w) as i64, (k % w) as i64);
        let mut best: Option<(i64, f64, usize)> = None;
        for s in 0..w * h {
            if !planes.occupied[s] {
                continue;
            }
            let (r1, c1) = ((s / w) as i64, (s % w) as i64);
            if (r1 - r0).abs().max((c1 - c0).abs()) > radius as i64 {
                continue;
            }
            let d2 = (r1 - r0).pow(2) + (c1 - c0).pow(2);
            let cand = (d2, planes.xz[s], s);
            if best.is_none_or(|b| (cand.0, cand.1) < (b.0, b.1)) {
                best = Some(cand);
            }
        }
        if let Some((_, _, s)) = best {
            out.xy[k] = planes.xy[s];
            out.yz[k] = planes.yz[s];
            out.xz[k] = planes.xz[s];
            out.occupied[k] = true;
        }
    }
    out
}

/// Point-in-box test from the box frame's axes.
pub fn inside(b: &Box3D, p: [f64; 3]) -> bool {
    let (dx, dy, dz) = (p[0] - b.center[0], p[1] - b.center[1], p[2] - b.center[2]);
    let (s, c) = (libm::sin(b.heading), libm::cos(b.heading));
    let along = dx * c + dy * s;
    let across = dy * c - dx * s;
    along.abs() <= b.extents[0] / 2.0 && across.abs() <= b.extents[1] / 2.0 && dz.abs() <= b.extents[2] / 2.0
}

/// Labelled pixels only: every (point, box) pair is visited; a pixel keeps
/// the largest class code it receives. Unlabelled pixels are `None`.
pub fn labels(cloud: &PointCloud, boxes: &[Box3D], rig: &SensorRig) -> Vec<Option<u8>> {
    let (w, h) = rig.resolution;
    let proj = project_to_image(&transform_to_camera(cloud, rig), rig);
    let mut out = vec![None; w * h];
    for (p, q) in cloud.points.iter().zip(&proj) {
        for b in boxes {
            if !inside(b, *p) {
                continue;
            }
            let Some((u, v)) = q.pixel(w, h) else { continue };
            let code = b.class.code();
            let cell: &mut Option<u8> = &mut out[v * w + u];
            *cell = Some(cell.map_or(code, |c: u8| c.max(code)));
        }
    }
    out
}

/// Per-class (TP, FP, FN) and the void count, by a double loop over pixels.
pub fn confusion(pred: &[u8], gt: &[u8], w: usize, h: usize) -> ([[u64; 3]; 3], u64) {
    let mut counts = [[0u64; 3]; 3];
    let mut void = 0;
    for r in 0..h {
        for c in 0..w {
            let (p, g) = (pred[r * w + c], gt[r * w + c]);
            if g == VOID {
                void += 1;
                continue;
            }
            for class in 0..3u8 {
                let k = class as usize;
                match (p == class, g == class) {
                    (true, true) => counts[k][0] += 1,
                    (true, false) => counts[k][1] += 1,
                    (false, true) => counts[k][2] += 1,
                    (false, false) => {}
                }
            }
        }
    }
    (counts, void)
}

pub fn gelu(x: f64) -> f64 {
    x * 0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

/// Class-token readout as a literal loop: for each patch token `t_i`,
/// `gelu([t_i, t_cls] · W + b)`.
pub fn readout(seq: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let (rows, d) = (seq.shape()[0], seq.shape()[1]);
    let out_d = weight.shape()[1];
    let mut out = Vec::with_capacity((rows - 1) * out_d);
    for i in 1..rows {
        let mut cat = Vec::with_capacity(2 * d);
        cat.extend((0..d).map(|j| seq.at(&[i, j])));
        cat.extend((0..d).map(|j| seq.at(&[0, j])));
        for o in 0..out_d {
            let mut acc = bias.data()[o];
            for (k, x) in cat.iter().enumerate() {
                acc += x * weight.at(&[k, o]);
            }
            out.push(gelu(acc));
        }
    }
    Tensor::new(&[rows - 1, out_d], out).unwrap()
}

/// Weighted cross-entropy by a pixel loop over `[3×h×w]` logits.
pub fn cross_entropy(logits: &Tensor, mask: &[u8], weights: &[f64; 3]) -> f64 {
    let hw = mask.len();
    let (mut total, mut count) = (0.0, 0usize);
    for (k, &m) in mask.iter().enumerate() {
        if m == VOID {
            continue;
        }
        let z: Vec<f64> = (0..3).map(|c| logits.data()[c * hw + k]).collect();
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += weights[m as usize] * (lse - z[m as usize]);
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}
