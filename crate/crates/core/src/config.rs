//! Model configuration and variant presets.

use alloc::format;

use crate::error::{Error, Result};

/// Sampling coefficients of the four assemble stages, relative to the
/// input resolution, paired with ascending taps.
pub const ASSEMBLE_SCALES: [usize; 4] = [4, 8, 16, 32];
/// Channel width of assembled feature maps and fusion blocks.
pub const DEFAULT_FUSION_DIM: usize = 256;
/// Background, vehicle, human.
pub const NUM_CLASSES: usize = 3;
/// MLP hidden width as a multiple of the token width.
pub const MLP_RATIO: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Variant {
    Base,
    Large,
    Huge,
    Hybrid,
    Toy,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Large => "large",
            Variant::Huge => "huge",
            Variant::Hybrid => "hybrid",
            Variant::Toy => "toy",
        }
    }
}

impl core::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "base" => Variant::Base,
            "large" => Variant::Large,
            "huge" => Variant::Huge,
            "hybrid" => Variant::Hybrid,
            "toy" => Variant::Toy,
            other => return Err(Error::config(format!("unknown variant {other}"))),
        })
    }
}

/// How images become tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Embedding {
    /// Non-overlapping patches, flattened and linearly projected.
    Patch,
    /// Strided convolution stem whose feature-map cells become tokens.
    ConvStem,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct EncoderConfig {
    pub variant: Variant,
    pub patch: usize,
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    /// Encoder layers (0-based) whose outputs feed the assemble stages.
    pub taps: Option<[usize; 4]>,
    /// Input `(height, width)`.
    pub input: (usize, usize),
    pub embedding: Embedding,
}

impl EncoderConfig {
    /// Preset for a variant. `Huge` carries no taps; supply them before use.
    pub fn preset(variant: Variant) -> Self {
        let (depth, dim, heads, taps) = match variant {
            Variant::Base | Variant::Hybrid => (12, 768, 12, Some([2, 5, 8, 11])),
            Variant::Large => (24, 1024, 16, Some([5, 11, 17, 23])),
            Variant::Huge => (32, 1280, 16, None),
            Variant::Toy => (8, 64, 4, Some([1, 3, 5, 7])),
        };
        let (patch, input) = match variant {
            Variant::Toy => (8, (96, 96)),
            _ => (16, (384, 384)),
        };
        EncoderConfig {
            variant,
            patch,
            depth,
            dim,
            heads,
            taps,
            input,
            embedding: if variant == Variant::Hybrid {
                Embedding::ConvStem
            } else {
                Embedding::Patch
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input;
        if self.patch == 0 || h == 0 || w == 0 || h % self.patch != 0 || w % self.patch != 0 {
            return Err(Error::config(format!(
                "input {h}x{w} is not divisible by patch size {}",
                self.patch
            )));
        }
        for s in ASSEMBLE_SCALES {
            if h % s != 0 || w % s != 0 {
                return Err(Error::config(format!("input {h}x{w} is not divisible by scale {s}")));
            }
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.embedding == Embedding::ConvStem && (self.patch < 8 || !self.patch.is_power_of_two()) {
            return Err(Error::config(
                "the convolution stem needs a power-of-two patch size of at least 8",
            ));
        }
        let taps = self.taps()?;
        if !taps.windows(2).all(|p| p[0] < p[1]) || taps[3] >= self.depth {
            return Err(Error::config(format!(
                "taps {taps:?} must be strictly ascending and below depth {}",
                self.depth
            )));
        }
        Ok(())
    }

    pub fn taps(&self) -> Result<[usize; 4]> {
        self.taps.ok_or_else(|| {
            Error::config(format!(
                "variant {} has no preset taps; four tap layers must be supplied",
                self.variant.name()
            ))
        })
    }

    /// Token grid `(rows, columns)`.
    pub fn grid(&self) -> (usize, usize) {
        (self.input.0 / self.patch, self.input.1 / self.patch)
    }

    pub fn num_patches(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub fusion_dim: usize,
}

impl ModelConfig {
    pub fn preset(variant: Variant) -> Self {
        ModelConfig {
            encoder: EncoderConfig::preset(variant),
            fusion_dim: DEFAULT_FUSION_DIM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.fusion_dim == 0 {
            return Err(Error::config("fusion_dim must be positive"));
        }
        Ok(())
    }

    pub fn input(&self) -> (usize, usize) {
        self.encoder.input
    }

    /// Spatial extents `(h/s, w/s)` of each assemble stage.
    pub fn stage_extents(&self) -> [(usize, usize); 4] {
        let (h, w) = self.encoder.input;
        ASSEMBLE_SCALES.map(|s| (h / s, w / s))
    }
}
