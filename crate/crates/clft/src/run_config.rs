//! The JSON document driving `train` (and supplying defaults to `eval`).
//!
//! ```json
//! {
//!   "model": { "variant": "toy", "fusion_dim": 16 },
//!   "train": { "l0": 0.001, "batch": 2, "max_epochs": 20, "modality": "C+L" },
//!   "paths": { "dataset": "data", "checkpoint": "ckpt", "log": "train.jsonl" }
//! }
//! ```
//!
//! Unknown keys anywhere are rejected. Model fields other than `variant`
//! override the variant's preset.

use std::path::{Path, PathBuf};

use clft_core::config::{Embedding, ModelConfig, Variant};
use clft_core::evaluation::SubsetTag;
use clft_core::geometry::SensorRig;
use clft_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::read_json;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taps: Option<[usize; 4]>,
    /// `[height, width]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Embedding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion_dim: Option<usize>,
}

impl ModelSection {
    pub fn preset(variant: Variant) -> Self {
        ModelSection {
            variant,
            patch: None,
            depth: None,
            dim: None,
            heads: None,
            taps: None,
            input: None,
            embedding: None,
            fusion_dim: None,
        }
    }

    pub fn resolve(&self) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::preset(self.variant);
        let e = &mut cfg.encoder;
        e.patch = self.patch.unwrap_or(e.patch);
        e.depth = self.depth.unwrap_or(e.depth);
        e.dim = self.dim.unwrap_or(e.dim);
        e.heads = self.heads.unwrap_or(e.heads);
        e.taps = self.taps.or(e.taps);
        e.input = self.input.unwrap_or(e.input);
        e.embedding = self.embedding.unwrap_or(e.embedding);
        cfg.fusion_dim = self.fusion_dim.unwrap_or(cfg.fusion_dim);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// JSON-lines training log.
    #[serde(default)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    /// When given, must equal the dataset's rig.
    #[serde(default)]
    pub rig: Option<SensorRig>,
    #[serde(default)]
    pub paths: Paths,
    /// Restricts the run to frames carrying these tags.
    #[serde(default)]
    pub subsets: Option<Vec<SubsetTag>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelSection::preset(Variant::Toy),
            train: TrainConfig::default(),
            rig: None,
            paths: Paths::default(),
            subsets: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Schema-level checks that need no files.
    pub fn validate(&self) -> Result<ModelConfig> {
        let model = self.model.resolve()?;
        self.train.validate()?;
        if let Some(rig) = &self.rig {
            rig.validate()?;
        }
        if matches!(&self.subsets, Some(s) if s.is_empty()) {
            return Err(Error::Usage("subsets, when given, must name at least one tag".into()));
        }
        Ok(model)
    }

    pub fn keeps(&self, tag: SubsetTag) -> bool {
        self.subsets.as_ref().is_none_or(|s| s.contains(&tag))
    }
}
