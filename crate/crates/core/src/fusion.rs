//! Cross-fusion decoder and the end-to-end model.

use alloc::format;
use alloc::vec::Vec;

use crate::assemble::{assemble_all, AssembleStage, FeatureMap, Stream};
use crate::config::{ModelConfig, NUM_CLASSES};
use crate::encoder::{encode, EncoderWeights};
use crate::error::{Error, Result};
use crate::geometry::PlaneStack;
use crate::graph::Exec;
use crate::layers::{fan_in_init, Conv2d, ConvShape, ConvTranspose2d};
use crate::params::{Init, ParamSink, ParamSpec, SpecCollector};
use crate::tensor::Tensor;

/// Input configuration of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Modality {
    #[cfg_attr(feature = "serde", serde(rename = "C"))]
    Camera,
    #[cfg_attr(feature = "serde", serde(rename = "L"))]
    Lidar,
    #[cfg_attr(feature = "serde", serde(rename = "C+L"))]
    Fusion,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Camera, Modality::Lidar, Modality::Fusion];

    pub fn label(self) -> &'static str {
        match self {
            Modality::Camera => "C",
            Modality::Lidar => "L",
            Modality::Fusion => "C+L",
        }
    }

    pub fn uses(self, stream: Stream) -> bool {
        !matches!(
            (self, stream),
            (Modality::Camera, Stream::Lidar) | (Modality::Lidar, Stream::Camera)
        )
    }
}

impl core::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "C" | "c" | "camera" => Ok(Modality::Camera),
            "L" | "l" | "lidar" => Ok(Modality::Lidar),
            "C+L" | "c+l" | "fusion" => Ok(Modality::Fusion),
            other => Err(Error::Usage(format!("unknown modality {other}; expected C, L or C+L"))),
        }
    }
}

/// `y = x + conv₂(relu(conv₁(relu(x))))`, bias-free 3×3 convolutions.
#[derive(Debug, Clone)]
pub struct Rcu<V> {
    pub conv1: Conv2d<V>,
    pub conv2: Conv2d<V>,
}

fn conv3(channels: usize) -> ConvShape {
    ConvShape {
        input: channels,
        output: channels,
        kernel: 3,
        stride: 1,
        pad: 1,
    }
}

impl<V: Copy> Rcu<V> {
    pub fn declare<S: ParamSink<V = V>>(s: &mut S, name: &str, channels: usize) -> Result<Self> {
        let fan_in = channels * 9;
        Ok(Rcu {
            conv1: Conv2d::declare(
                s,
                &format!("{name}.conv1"),
                conv3(channels),
                false,
                fan_in_init(fan_in, libm::sqrt(2.0)),
            )?,
            // Small second conv keeps each unit close to identity at init.
            conv2: Conv2d::declare(
                s,
                &format!("{name}.conv2"),
                conv3(channels),
                false,
                fan_in_init(fan_in, 0.1),
            )?,
        })
    }
}

pub fn rcu<E: Exec>(e: &mut E, p: &Rcu<E::V>, x: E::V) -> Result<E::V> {
    let h = e.relu(x);
    let h = p.conv1.forward(e, h)?;
    let h = e.relu(h);
    let h = p.conv2.forward(e, h)?;
    e.add(x, h)
}

#[derive(Debug, Clone)]
pub struct FusionBlock<V> {
    pub camera: [Rcu<V>; 2],
    pub lidar: [Rcu<V>; 2],
    pub post: Rcu<V>,
    /// 2× transposed convolution, initialized to nearest-neighbour.
    pub up: ConvTranspose2d<V>,
}

impl<V: Copy> FusionBlock<V> {
    pub fn declare<S: ParamSink<V = V>>(s: &mut S, name: &str, channels: usize) -> Result<Self> {
        Ok(FusionBlock {
            camera: [
                Rcu::declare(s, &format!("{name}.camera.0"), channels)?,
                Rcu::declare(s, &format!("{name}.camera.1"), channels)?,
            ],
            lidar: [
                Rcu::declare(s, &format!("{name}.lidar.0"), channels)?,
                Rcu::declare(s, &format!("{name}.lidar.1"), channels)?,
            ],
            post: Rcu::declare(s, &format!("{name}.post"), channels)?,
            up: ConvTranspose2d::declare(
                s,
                &format!("{name}.up"),
                ConvShape {
                    input: channels,
                    output: channels,
                    kernel: 2,
                    stride: 2,
                    pad: 0,
                },
                false,
                Init::NearestUpsample,
            )?,
        })
    }
}

/// `up₂(rcu_post(rcu_cam²(cam) + rcu_lid²(lid) + prev))`. A `None` stream or
/// `prev` contributes exactly zero at the sum node. `shape` is the stage
/// shape `[D̂ × h × w]`, needed when every term is absent.
pub fn fuse_block<E: Exec>(
    e: &mut E,
    p: &FusionBlock<E::V>,
    cam: Option<E::V>,
    lid: Option<E::V>,
    prev: Option<E::V>,
    shape: &[usize],
) -> Result<E::V> {
    let mut terms = Vec::with_capacity(3);
    for (x, units) in [(cam, &p.camera), (lid, &p.lidar)] {
        if let Some(x) = x {
            if e.shape(x) != shape {
                return Err(Error::shape("fuse_block", e.shape(x), shape));
            }
            let h = rcu(e, &units[0], x)?;
            terms.push(rcu(e, &units[1], h)?);
        }
    }
    if let Some(prev) = prev {
        if e.shape(prev) != shape {
            return Err(Error::shape("fuse_block", e.shape(prev), shape));
        }
        terms.push(prev);
    }
    let mut sum = match terms.first() {
        Some(&t) => t,
        None => e.zeros(shape),
    };
    for &t in terms.iter().skip(1) {
        sum = e.add(sum, t)?;
    }
    let h = rcu(e, &p.post, sum)?;
    p.up.forward(e, h)
}

#[derive(Debug, Clone)]
pub struct Head<V> {
    pub up: ConvTranspose2d<V>,
    pub classify: Conv2d<V>,
}

impl<V: Copy> Head<V> {
    pub fn declare<S: ParamSink<V = V>>(s: &mut S, name: &str, channels: usize) -> Result<Self> {
        let hidden = (channels / 2).max(1);
        Ok(Head {
            up: ConvTranspose2d::declare(
                s,
                &format!("{name}.up"),
                ConvShape {
                    input: channels,
                    output: hidden,
                    kernel: 2,
                    stride: 2,
                    pad: 0,
                },
                true,
                fan_in_init(channels, libm::sqrt(2.0)),
            )?,
            classify: Conv2d::declare(
                s,
                &format!("{name}.classify"),
                ConvShape {
                    input: hidden,
                    output: NUM_CLASSES,
                    kernel: 1,
                    stride: 1,
                    pad: 0,
                },
                true,
                fan_in_init(hidden, 1.0),
            )?,
        })
    }
}

/// Final 2× transposed convolution, ReLU and 1×1 class projection.
pub fn segmentation_head<E: Exec>(e: &mut E, p: &Head<E::V>, x: E::V) -> Result<E::V> {
    let h = p.up.forward(e, x)?;
    let h = e.relu(h);
    p.classify.forward(e, h)
}

#[derive(Debug, Clone)]
pub struct ClftWeights<V> {
    pub camera: EncoderWeights<V>,
    pub lidar: EncoderWeights<V>,
    pub camera_stages: [AssembleStage<V>; 4],
    pub lidar_stages: [AssembleStage<V>; 4],
    /// Indexed by stage; folded from stage 3 (coarsest) to stage 0.
    pub blocks: [FusionBlock<V>; 4],
    pub head: Head<V>,
    pub config: ModelConfig,
}

fn four<T>(mut f: impl FnMut(usize) -> Result<T>) -> Result<[T; 4]> {
    let v = (0..4).map(&mut f).collect::<Result<Vec<_>>>()?;
    v.try_into().map_err(|_| Error::config("expected four stages"))
}

impl<V: Copy> ClftWeights<V> {
    pub fn declare<S: ParamSink<V = V>>(s: &mut S, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let dh = cfg.fusion_dim;
        let camera = EncoderWeights::declare(s, "camera.encoder", &cfg.encoder)?;
        let lidar = EncoderWeights::declare(s, "lidar.encoder", &cfg.encoder)?;
        let camera_stages = four(|i| AssembleStage::declare(s, &format!("camera.assemble.{i}"), cfg, i))?;
        let lidar_stages = four(|i| AssembleStage::declare(s, &format!("lidar.assemble.{i}"), cfg, i))?;
        let blocks = four(|i| FusionBlock::declare(s, &format!("fusion.{i}"), dh))?;
        let head = Head::declare(s, "head", dh)?;
        Ok(ClftWeights {
            camera,
            lidar,
            camera_stages,
            lidar_stages,
            blocks,
            head,
            config: cfg.clone(),
        })
    }
}

/// Declaration order, names and shapes of every model parameter.
pub fn param_specs(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    let mut c = SpecCollector::default();
    ClftWeights::declare(&mut c, cfg)?;
    Ok(c.specs)
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutputs<V> {
    pub camera_taps: Option<[V; 4]>,
    pub lidar_taps: Option<[V; 4]>,
    pub camera_maps: Option<[FeatureMap<V>; 4]>,
    pub lidar_maps: Option<[FeatureMap<V>; 4]>,
    /// Fusion block outputs in fold order (coarse to fine).
    pub fused: Vec<V>,
    /// `[C × h × w]`
    pub logits: V,
}

/// Full forward pass. A `None` stream is masked to zero at every fusion sum
/// node; `modality` only checks that the streams it needs are present.
pub fn clft_forward<E: Exec>(
    e: &mut E,
    w: &ClftWeights<E::V>,
    rgb: Option<E::V>,
    planes: Option<E::V>,
) -> Result<ForwardOutputs<E::V>> {
    let camera_taps = rgb.map(|x| encode(e, &w.camera, x)).transpose()?;
    let lidar_taps = planes.map(|x| encode(e, &w.lidar, x)).transpose()?;
    let camera_maps = camera_taps
        .map(|t| assemble_all(e, &w.camera_stages, t, Stream::Camera))
        .transpose()?;
    let lidar_maps = lidar_taps
        .map(|t| assemble_all(e, &w.lidar_stages, t, Stream::Lidar))
        .transpose()?;
    let extents = w.config.stage_extents();
    let mut prev = None;
    let mut fused = Vec::with_capacity(4);
    for stage in (0..4).rev() {
        let (h, wd) = extents[stage];
        let shape = [w.config.fusion_dim, h, wd];
        let cam = camera_maps.as_ref().map(|m| m[stage].value);
        let lid = lidar_maps.as_ref().map(|m| m[stage].value);
        let out = fuse_block(e, &w.blocks[stage], cam, lid, prev, &shape)?;
        let want = [w.config.fusion_dim, 2 * h, 2 * wd];
        if e.shape(out) != want {
            return Err(Error::shape("fusion fold", e.shape(out), &want));
        }
        fused.push(out);
        prev = Some(out);
    }
    let logits = segmentation_head(e, &w.head, prev.expect("four fusion blocks"))?;
    Ok(ForwardOutputs {
        camera_taps,
        lidar_taps,
        camera_maps,
        lidar_maps,
        fused,
        logits,
    })
}

/// Decides which streams enter the network. Streams the modality does not
/// use are dropped; an all-zero input carries no signal and is masked like
/// an absent one.
pub fn active_streams<'a>(
    modality: Modality,
    rgb: Option<&'a Tensor>,
    planes: Option<&'a Tensor>,
) -> Result<(Option<&'a Tensor>, Option<&'a Tensor>)> {
    if modality.uses(Stream::Camera) && rgb.is_none() {
        return Err(Error::Usage(format!(
            "modality {} requires an RGB image",
            modality.label()
        )));
    }
    if modality.uses(Stream::Lidar) && planes.is_none() {
        return Err(Error::Usage(format!(
            "modality {} requires LiDAR planes",
            modality.label()
        )));
    }
    let keep = |t: Option<&'a Tensor>, s| t.filter(|t| modality.uses(s) && !t.is_all_zero());
    Ok((keep(rgb, Stream::Camera), keep(planes, Stream::Lidar)))
}

/// LiDAR network input `[3 × h × w]`: the XY, YZ, XZ planes, each normalized
/// to zero mean and unit variance over occupied pixels; empty pixels are 0.
pub fn lidar_input(planes: &PlaneStack) -> Tensor {
    let (w, h) = (planes.width, planes.height);
    let mut data = Vec::with_capacity(3 * w * h);
    let count = planes.occupied_count();
    for plane in planes.planes() {
        let (mean, std) = if count == 0 {
            (0.0, 1.0)
        } else {
            let n = count as f64;
            let occupied = || plane.iter().zip(&planes.occupied).filter(|(_, &o)| o).map(|(v, _)| *v);
            let mean = occupied().sum::<f64>() / n;
            let var = occupied().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = libm::sqrt(var);
            (mean, if std > 1e-12 { std } else { 1.0 })
        };
        data.extend(
            plane
                .iter()
                .zip(&planes.occupied)
                .map(|(v, &o)| if o { (v - mean) / std } else { 0.0 }),
        );
    }
    Tensor::new(&[3, h, w], data).expect("plane extents are positive")
}

/// Per-pixel argmax over the class axis of `[C × h × w]` logits.
pub fn argmax_mask(logits: &Tensor) -> Result<crate::geometry::ClassMask> {
    let &[c, h, w] = logits.shape() else {
        return Err(Error::shape("argmax_mask", logits.shape(), &[NUM_CLASSES, 0, 0]));
    };
    if c != NUM_CLASSES {
        return Err(Error::shape("argmax_mask", logits.shape(), &[NUM_CLASSES, h, w]));
    }
    let d = logits.data();
    let plane = h * w;
    let codes = (0..plane)
        .map(|i| {
            let mut best = 0;
            for k in 1..c {
                if d[k * plane + i] > d[best * plane + i] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    crate::geometry::ClassMask::new(w, h, codes)
}
