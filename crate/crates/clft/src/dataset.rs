//! On-disk datasets.
//!
//! A dataset directory holds `dataset.json` (rig, densification radius and
//! one subset tag per frame) and, per frame `i`, the files
//! `frame_%06d.rgb` (`[3×h×w]` tensor, values in `[0, 1]`),
//! `frame_%06d.cloud` (text point cloud, LiDAR frame) and
//! `frame_%06d.boxes` (JSON box list). Derived `frame_%06d.planes`
//! (`[4×h×w]` tensor) and `frame_%06d.mask` (`[h×w]` tensor) are cached
//! alongside and recomputed when absent.

use std::fs;
use std::path::{Path, PathBuf};

use clft_core::assemble::Stream;
use clft_core::evaluation::SubsetTag;
use clft_core::fusion::{lidar_input, Modality};
use clft_core::geometry::{boxes_to_mask, densify, filter_and_populate, ClassMask, PlaneStack, SensorRig};
use clft_core::synthetic::Frame;
use clft_core::training::Sample;
use clft_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{
    mask_from_tensor, mask_to_tensor, planes_from_tensor, planes_to_tensor, read_boxes, read_cloud, read_json,
    write_cloud, write_json,
};
use crate::tensor_io::{load_tensor, save_tensor};

pub const MANIFEST: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub tag: SubsetTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub rig: SensorRig,
    /// Densification radius used for the cached planes.
    pub dilation: usize,
    pub frames: Vec<FrameEntry>,
}

pub fn frame_path(dir: &Path, index: usize, ext: &str) -> PathBuf {
    dir.join(format!("frame_{index:06}.{ext}"))
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let manifest: DatasetManifest = read_json(&path)?;
        manifest
            .rig
            .validate()
            .map_err(|e| Error::format(&path, e.to_string()))?;
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    /// Writes frames with their caches and the manifest.
    pub fn create(dir: &Path, frames: &[Frame], rig: &SensorRig, dilation: usize) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, f) in frames.iter().enumerate() {
            save_tensor(&frame_path(dir, i, "rgb"), &f.rgb)?;
            write_cloud(&frame_path(dir, i, "cloud"), &f.cloud)?;
            write_json(&frame_path(dir, i, "boxes"), &f.boxes)?;
        }
        let manifest = DatasetManifest {
            rig: rig.clone(),
            dilation,
            frames: frames.iter().map(|f| FrameEntry { tag: f.tag }).collect(),
        };
        write_json(&dir.join(MANIFEST), &manifest)?;
        let ds = Dataset {
            dir: dir.to_path_buf(),
            manifest,
        };
        ds.write_caches()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.manifest.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.frames.is_empty()
    }

    pub fn rig(&self) -> &SensorRig {
        &self.manifest.rig
    }

    pub fn tag(&self, i: usize) -> SubsetTag {
        self.manifest.frames[i].tag
    }

    fn path(&self, i: usize, ext: &str) -> PathBuf {
        frame_path(&self.dir, i, ext)
    }

    pub fn rgb(&self, i: usize) -> Result<Tensor> {
        let path = self.path(i, "rgb");
        let t = load_tensor(&path)?;
        let (w, h) = self.rig().resolution;
        if t.shape() != [3, h, w] {
            return Err(Error::format(
                &path,
                format!("expected [3×{h}×{w}], found {:?}", t.shape()),
            ));
        }
        Ok(t)
    }

    fn computed_planes(&self, i: usize, dilation: usize) -> Result<PlaneStack> {
        let cloud = read_cloud(&self.path(i, "cloud"))?;
        Ok(densify(&filter_and_populate(&cloud, self.rig()), dilation))
    }

    fn computed_mask(&self, i: usize) -> Result<ClassMask> {
        let cloud = read_cloud(&self.path(i, "cloud"))?;
        let boxes = read_boxes(&self.path(i, "boxes"))?;
        Ok(boxes_to_mask(&cloud, &boxes, self.rig()))
    }

    fn check_extent(&self, path: &Path, w: usize, h: usize) -> Result<()> {
        if (w, h) != self.rig().resolution {
            return Err(Error::format(
                path,
                format!("{w}×{h} grid does not match the rig resolution"),
            ));
        }
        Ok(())
    }

    pub fn planes(&self, i: usize) -> Result<PlaneStack> {
        let path = self.path(i, "planes");
        if !path.exists() {
            return self.computed_planes(i, self.manifest.dilation);
        }
        let p = planes_from_tensor(&load_tensor(&path)?, &path)?;
        self.check_extent(&path, p.width, p.height)?;
        Ok(p)
    }

    pub fn mask(&self, i: usize) -> Result<ClassMask> {
        let path = self.path(i, "mask");
        if !path.exists() {
            return self.computed_mask(i);
        }
        let m = mask_from_tensor(&load_tensor(&path)?, &path)?;
        self.check_extent(&path, m.width, m.height)?;
        Ok(m)
    }

    /// Recomputes and stores planes and masks for every frame.
    pub fn write_caches(&self) -> Result<()> {
        for i in 0..self.len() {
            let planes = self.computed_planes(i, self.manifest.dilation)?;
            save_tensor(&self.path(i, "planes"), &planes_to_tensor(&planes))?;
            save_tensor(&self.path(i, "mask"), &mask_to_tensor(&self.computed_mask(i)?))?;
        }
        Ok(())
    }

    /// Changes the densification radius and rewrites the caches.
    pub fn set_dilation(&mut self, dilation: usize) -> Result<()> {
        self.manifest.dilation = dilation;
        write_json(&self.dir.join(MANIFEST), &self.manifest)?;
        self.write_caches()
    }

    /// Network inputs for one frame. Only the streams the modality uses are
    /// read, so camera-only evaluation works without any LiDAR files.
    pub fn sample(&self, i: usize, modality: Modality) -> Result<Sample> {
        let rgb = modality.uses(Stream::Camera).then(|| self.rgb(i)).transpose()?;
        let lidar = modality
            .uses(Stream::Lidar)
            .then(|| self.planes(i).map(|p| lidar_input(&p)))
            .transpose()?;
        Ok(Sample {
            rgb,
            lidar,
            mask: self.mask(i)?,
        })
    }
}
