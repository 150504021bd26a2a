//! Token sequences to image-like feature maps: class-token readout, spatial
//! reassembly, channel projection and tap-dependent resampling.

use alloc::format;
use alloc::vec::Vec;

use crate::config::{ModelConfig, ASSEMBLE_SCALES};
use crate::error::{Error, Result};
use crate::graph::Exec;
use crate::layers::{fan_in_init, Conv2d, ConvShape, ConvTranspose2d, Linear};
use crate::params::{Init, ParamSink};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Stream {
    Camera,
    Lidar,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::Camera => "camera",
            Stream::Lidar => "lidar",
        }
    }
}

/// Resampling from the patch grid `h/p` to the stage grid `h/s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleFactor {
    Up(usize),
    Identity,
    Down(usize),
}

impl ResampleFactor {
    /// Factor `p/s`. Supported: ×4, ×2, ×1, ×1/2, ×1/4.
    pub fn new(patch: usize, scale: usize) -> Result<Self> {
        let unsupported = || Error::config(format!("unsupported resample factor {patch}/{scale}"));
        if patch == 0 || scale == 0 {
            return Err(unsupported());
        }
        let f = if patch >= scale {
            if !patch.is_multiple_of(scale) {
                return Err(unsupported());
            }
            match patch / scale {
                1 => ResampleFactor::Identity,
                f @ (2 | 4) => ResampleFactor::Up(f),
                _ => return Err(unsupported()),
            }
        } else {
            if !scale.is_multiple_of(patch) {
                return Err(unsupported());
            }
            match scale / patch {
                f @ (2 | 4) => ResampleFactor::Down(f),
                _ => return Err(unsupported()),
            }
        };
        Ok(f)
    }

    pub fn apply(self, extent: usize) -> usize {
        match self {
            ResampleFactor::Up(f) => extent * f,
            ResampleFactor::Identity => extent,
            ResampleFactor::Down(f) => extent / f,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Resample<V> {
    /// Transposed convolution with kernel and stride equal to the factor.
    Up(ConvTranspose2d<V>),
    Identity,
    /// Chained stride-2 convolutions (k=4, pad 1), one per halving.
    Down(Vec<Conv2d<V>>),
}

#[derive(Debug, Clone)]
pub struct AssembleStage<V> {
    pub tap: usize,
    pub scale: usize,
    /// `W[2D × D]`, `b[D]`.
    pub readout: Linear<V>,
    pub project: Conv2d<V>,
    pub resample: Resample<V>,
    pub grid: (usize, usize),
}

impl<V: Copy> AssembleStage<V> {
    pub fn declare<S: ParamSink<V = V>>(s: &mut S, name: &str, cfg: &ModelConfig, index: usize) -> Result<Self> {
        cfg.validate()?;
        let enc = &cfg.encoder;
        let (d, dh) = (enc.dim, cfg.fusion_dim);
        let scale = ASSEMBLE_SCALES[index];
        let readout = Linear::declare(s, &format!("{name}.readout"), 2 * d, d, Init::TruncNormal(0.02))?;
        let project = Conv2d::declare(
            s,
            &format!("{name}.project"),
            ConvShape {
                input: d,
                output: dh,
                kernel: 1,
                stride: 1,
                pad: 0,
            },
            true,
            fan_in_init(d, 1.0),
        )?;
        let resample = match ResampleFactor::new(enc.patch, scale)? {
            ResampleFactor::Identity => Resample::Identity,
            ResampleFactor::Up(f) => Resample::Up(ConvTranspose2d::declare(
                s,
                &format!("{name}.resample"),
                ConvShape {
                    input: dh,
                    output: dh,
                    kernel: f,
                    stride: f,
                    pad: 0,
                },
                true,
                Init::NearestUpsample,
            )?),
            ResampleFactor::Down(f) => {
                let steps = f.trailing_zeros() as usize;
                let convs = (0..steps)
                    .map(|i| {
                        Conv2d::declare(
                            s,
                            &format!("{name}.resample.{i}"),
                            ConvShape {
                                input: dh,
                                output: dh,
                                kernel: 4,
                                stride: 2,
                                pad: 1,
                            },
                            true,
                            fan_in_init(dh * 16, 1.0),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Resample::Down(convs)
            }
        };
        Ok(AssembleStage {
            tap: enc.taps()?[index],
            scale,
            readout,
            project,
            resample,
            grid: enc.grid(),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FeatureMap<V> {
    /// `[D̂ × h/s × w/s]`
    pub value: V,
    pub stream: Stream,
    pub stage: usize,
}

/// Class-token readout: `GELU([T_i, T_cls] · W + b)` for every patch token.
pub fn readout_project<E: Exec>(e: &mut E, readout: &Linear<E::V>, seq: E::V) -> Result<E::V> {
    let rows = e.shape(seq)[0];
    if rows < 2 {
        return Err(Error::shape("readout_project", e.shape(seq), &[2, 0]));
    }
    let n = rows - 1;
    let tokens = e.slice_rows(seq, 1, n)?;
    let cls = e.repeat_row(seq, 0, n)?;
    let cat = e.concat_cols(tokens, cls)?;
    let y = readout.forward(e, cat)?;
    Ok(e.gelu(y))
}

/// `[N × D]` to `[D × gh × gw]`, inverse of the row-major patch order.
pub fn spatialize<E: Exec>(e: &mut E, tokens: E::V, grid: (usize, usize)) -> Result<E::V> {
    let &[n, d] = e.shape(tokens) else {
        return Err(Error::shape("spatialize", e.shape(tokens), &[grid.0 * grid.1, 0]));
    };
    if n != grid.0 * grid.1 {
        return Err(Error::shape("spatialize", &[n, d], &[grid.0 * grid.1, d]));
    }
    let t = e.transpose(tokens)?;
    e.reshape(t, &[d, grid.0, grid.1])
}

pub fn resample<E: Exec>(e: &mut E, r: &Resample<E::V>, x: E::V) -> Result<E::V> {
    match r {
        Resample::Identity => Ok(x),
        Resample::Up(t) => t.forward(e, x),
        Resample::Down(convs) => {
            let mut x = x;
            for c in convs {
                x = c.forward(e, x)?;
            }
            Ok(x)
        }
    }
}

pub fn project_resample<E: Exec>(e: &mut E, stage: &AssembleStage<E::V>, map: E::V) -> Result<E::V> {
    let x = stage.project.forward(e, map)?;
    resample(e, &stage.resample, x)
}

/// One stage: readout, spatialize, project and resample.
pub fn assemble<E: Exec>(e: &mut E, stage: &AssembleStage<E::V>, seq: E::V) -> Result<E::V> {
    let tokens = readout_project(e, &stage.readout, seq)?;
    let map = spatialize(e, tokens, stage.grid)?;
    project_resample(e, stage, map)
}

/// Pairs tap `i` with stage `i`; the deepest tap yields the coarsest map.
pub fn assemble_all<E: Exec>(
    e: &mut E,
    stages: &[AssembleStage<E::V>; 4],
    taps: [E::V; 4],
    stream: Stream,
) -> Result<[FeatureMap<E::V>; 4]> {
    let mut out = Vec::with_capacity(4);
    for (i, (stage, seq)) in stages.iter().zip(taps).enumerate() {
        out.push(FeatureMap {
            value: assemble(e, stage, seq)?,
            stream,
            stage: i,
        });
    }
    out.try_into().map_err(|_| Error::config("assemble needs four stages"))
}
