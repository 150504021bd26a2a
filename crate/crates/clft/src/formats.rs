//! Point clouds (text), boxes and rigs (JSON), and tensor encodings of
//! plane stacks and class masks.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use clft_core::geometry::{is_mask_code, Box3D, ClassMask, PlaneStack, PointCloud, SensorRig};
use clft_core::Tensor;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::json(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

/// One `x y z` triple per line; blank lines and `#` comments are ignored.
pub fn parse_cloud(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::format(path, format!("line {}: expected three numbers, got {line:?}", i + 1));
        if fields.len() != 3 {
            return Err(bad());
        }
        let mut p = [0.0; 3];
        for (slot, f) in p.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|_| bad())?;
        }
        points.push(p);
    }
    PointCloud::new(points).map_err(|e| Error::format(path, e.to_string()))
}

/// Shortest round-trip decimal form, so reading back is exact.
pub fn format_cloud(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    for [x, y, z] in &cloud.points {
        let _ = writeln!(out, "{x:?} {y:?} {z:?}");
    }
    out
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    parse_cloud(&read_text(path)?, path)
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_text(path, &format_cloud(cloud))
}

pub fn read_boxes(path: &Path) -> Result<Vec<Box3D>> {
    let boxes: Vec<Box3D> = read_json(path)?;
    for b in &boxes {
        Box3D::new(b.center, b.extents, b.heading, b.class).map_err(|e| Error::format(path, e.to_string()))?;
    }
    Ok(boxes)
}

pub fn read_rig(path: &Path) -> Result<SensorRig> {
    let rig: SensorRig = read_json(path)?;
    rig.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(rig)
}

/// `[4 × h × w]`: the xy, yz and xz grids followed by occupancy as 0/1.
pub fn planes_to_tensor(p: &PlaneStack) -> Tensor {
    let mut data = Vec::with_capacity(4 * p.xy.len());
    data.extend_from_slice(&p.xy);
    data.extend_from_slice(&p.yz);
    data.extend_from_slice(&p.xz);
    data.extend(p.occupied.iter().map(|&o| if o { 1.0 } else { 0.0 }));
    Tensor::new(&[4, p.height, p.width], data).expect("consistent plane stack")
}

pub fn planes_from_tensor(t: &Tensor, path: &Path) -> Result<PlaneStack> {
    let &[4, height, width] = t.shape() else {
        return Err(Error::format(
            path,
            format!("plane stack must be [4×h×w], found {:?}", t.shape()),
        ));
    };
    let n = height * width;
    let d = t.data();
    let occupied = d[3 * n..]
        .iter()
        .map(|&v| match v {
            0.0 => Ok(false),
            1.0 => Ok(true),
            _ => Err(Error::format(path, format!("occupancy value {v} is not 0 or 1"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PlaneStack {
        width,
        height,
        xy: d[..n].to_vec(),
        yz: d[n..2 * n].to_vec(),
        xz: d[2 * n..3 * n].to_vec(),
        occupied,
    })
}

/// `[h × w]` floats holding the integer codes.
pub fn mask_to_tensor(m: &ClassMask) -> Tensor {
    Tensor::new(&[m.height, m.width], m.codes.iter().map(|&c| f64::from(c)).collect()).expect("consistent mask")
}

pub fn mask_from_tensor(t: &Tensor, path: &Path) -> Result<ClassMask> {
    let &[height, width] = t.shape() else {
        return Err(Error::format(
            path,
            format!("mask must be [h×w], found {:?}", t.shape()),
        ));
    };
    let codes = t
        .data()
        .iter()
        .map(|&v| {
            let code = v as u8;
            if f64::from(code) == v && is_mask_code(code) {
                Ok(code)
            } else {
                Err(Error::format(path, format!("invalid mask code {v}")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClassMask { width, height, codes })
}
