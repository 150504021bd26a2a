//! 8-bit PNG output: projection previews, class-mask renderings and
//! prediction overlays.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use clft_core::geometry::ClassMask;
use clft_core::Tensor;

use crate::error::{Error, Result};

/// Display colors for class codes 0 (background), 1 (vehicle), 2 (human).
pub const PALETTE: [[u8; 3]; 3] = [[0, 0, 0], [0, 114, 255], [255, 64, 64]];
/// Weight of the class color where an overlay marks a vehicle or human.
const OVERLAY_ALPHA: f64 = 0.5;

fn encode(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut w = enc.write_header().map_err(to_io)?;
    w.write_image_data(data).map_err(to_io)?;
    w.finish().map_err(to_io)
}

pub fn write_gray(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    encode(path, width, height, png::ColorType::Grayscale, pixels)
}

pub fn write_rgb(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    encode(path, width, height, png::ColorType::Rgb, pixels)
}

/// Grayscale proportional to `|value|`, the largest magnitude among
/// occupied pixels mapping to 255; empty pixels are black.
pub fn proportional_gray(values: &[f64], occupied: &[bool]) -> Vec<u8> {
    let max = values
        .iter()
        .zip(occupied)
        .filter(|(_, &o)| o)
        .fold(0.0f64, |m, (v, _)| m.max(v.abs()));
    values
        .iter()
        .zip(occupied)
        .map(|(v, &o)| {
            if o && max > 0.0 {
                (255.0 * v.abs() / max).round() as u8
            } else {
                0
            }
        })
        .collect()
}

fn to_byte(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Interleaved 8-bit RGB from a `[3 × h × w]` image in `[0, 1]`.
pub fn rgb_bytes(image: &Tensor) -> Vec<u8> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let d = image.data();
    let mut out = Vec::with_capacity(3 * h * w);
    for k in 0..h * w {
        for c in 0..3 {
            out.push(to_byte(d[c * h * w + k]));
        }
    }
    out
}

/// Palette colors only. Codes outside 0–2 (void) render as background.
pub fn mask_bytes(mask: &ClassMask) -> Vec<u8> {
    mask.codes
        .iter()
        .flat_map(|&c| PALETTE.get(c as usize).copied().unwrap_or(PALETTE[0]))
        .collect()
}

/// Vehicle and human pixels blended with their palette color; background
/// pixels keep the camera image.
pub fn overlay_bytes(image: &Tensor, mask: &ClassMask) -> Vec<u8> {
    let mut out = rgb_bytes(image);
    for (k, &c) in mask.codes.iter().enumerate() {
        if c == 0 || c as usize >= PALETTE.len() {
            continue;
        }
        for ch in 0..3 {
            let base = f64::from(out[3 * k + ch]);
            let tint = f64::from(PALETTE[c as usize][ch]);
            out[3 * k + ch] = ((1.0 - OVERLAY_ALPHA) * base + OVERLAY_ALPHA * tint).round() as u8;
        }
    }
    out
}
