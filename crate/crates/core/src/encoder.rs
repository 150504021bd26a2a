//! Vision-transformer encoder: image to tokens, class token and positional
//! table, pre-norm transformer layers, and tapped layer outputs.

use alloc::format;
use alloc::vec::Vec;

use crate::config::{Embedding, EncoderConfig, MLP_RATIO};
use crate::error::{Error, Result};
use crate::graph::Exec;
use crate::layers::{fan_in_init, Conv2d, ConvShape, Linear, Norm};
use crate::params::{Init, ParamSink};

const PROJECTION_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct EncoderLayer<V> {
    pub norm1: Norm<V>,
    pub qkv: Linear<V>,
    pub proj: Linear<V>,
    pub norm2: Norm<V>,
    pub fc1: Linear<V>,
    pub fc2: Linear<V>,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub enum Embed<V> {
    Patch {
        proj: Linear<V>,
        patch: usize,
    },
    /// Convolution blocks with ReLU between them (not after the last).
    Stem {
        convs: Vec<Conv2d<V>>,
    },
}

#[derive(Debug, Clone)]
pub struct EncoderWeights<V> {
    pub embed: Embed<V>,
    /// `[1 × D]`
    pub cls: V,
    /// `[(N+1) × D]`
    pub pos: V,
    pub layers: Vec<EncoderLayer<V>>,
    pub taps: [usize; 4],
    pub input: (usize, usize),
    pub grid: (usize, usize),
}

impl<V: Copy> EncoderLayer<V> {
    pub fn declare<S: ParamSink<V = V>>(s: &mut S, name: &str, dim: usize, heads: usize) -> Result<Self> {
        let init = Init::TruncNormal(PROJECTION_STD);
        Ok(EncoderLayer {
            norm1: Norm::declare(s, &format!("{name}.norm1"), dim)?,
            qkv: Linear::declare(s, &format!("{name}.attn.qkv"), dim, 3 * dim, init)?,
            proj: Linear::declare(s, &format!("{name}.attn.proj"), dim, dim, init)?,
            norm2: Norm::declare(s, &format!("{name}.norm2"), dim)?,
            fc1: Linear::declare(s, &format!("{name}.mlp.fc1"), dim, MLP_RATIO * dim, init)?,
            fc2: Linear::declare(s, &format!("{name}.mlp.fc2"), MLP_RATIO * dim, dim, init)?,
            heads,
        })
    }
}

/// Strides of the convolution stem for a patch size `p`: `2, 2, p/4`.
pub fn stem_strides(patch: usize) -> [usize; 3] {
    [2, 2, patch / 4]
}

impl<V: Copy> EncoderWeights<V> {
    pub fn declare<S: ParamSink<V = V>>(s: &mut S, name: &str, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let embed = match cfg.embedding {
            Embedding::Patch => {
                let fan_in = 3 * cfg.patch * cfg.patch;
                Embed::Patch {
                    proj: Linear::declare(
                        s,
                        &format!("{name}.patch_embed"),
                        fan_in,
                        d,
                        Init::TruncNormal(PROJECTION_STD),
                    )?,
                    patch: cfg.patch,
                }
            }
            Embedding::ConvStem => {
                let widths = [3, d / 4, d / 2, d];
                let mut convs = Vec::with_capacity(3);
                for (i, stride) in stem_strides(cfg.patch).into_iter().enumerate() {
                    // Stride-2 blocks use k=4, pad 1 so even extents halve exactly.
                    let (kernel, pad) = if stride == 2 { (4, 1) } else { (stride, 0) };
                    let shape = ConvShape {
                        input: widths[i],
                        output: widths[i + 1],
                        kernel,
                        stride,
                        pad,
                    };
                    let init = fan_in_init(widths[i] * kernel * kernel, libm::sqrt(2.0));
                    convs.push(Conv2d::declare(s, &format!("{name}.stem.{i}"), shape, true, init)?);
                }
                Embed::Stem { convs }
            }
        };
        let n = cfg.num_patches();
        let cls = s.param(&format!("{name}.cls_token"), &[1, d], Init::TruncNormal(PROJECTION_STD))?;
        let pos = s.param(
            &format!("{name}.pos_embed"),
            &[n + 1, d],
            Init::TruncNormal(PROJECTION_STD),
        )?;
        let layers = (0..cfg.depth)
            .map(|i| EncoderLayer::declare(s, &format!("{name}.layers.{i}"), d, cfg.heads))
            .collect::<Result<Vec<_>>>()?;
        Ok(EncoderWeights {
            embed,
            cls,
            pos,
            layers,
            taps: cfg.taps()?,
            input: cfg.input,
            grid: cfg.grid(),
        })
    }
}

fn check_image<E: Exec>(e: &E, image: E::V, input: (usize, usize)) -> Result<()> {
    let want = [3, input.0, input.1];
    if e.shape(image) != want {
        return Err(Error::config(format!(
            "image shape {:?} does not match configured input {want:?}",
            e.shape(image)
        )));
    }
    Ok(())
}

/// Patch tokens `[N × D]`, patches in row-major grid order.
pub fn patch_embed<E: Exec>(e: &mut E, proj: &Linear<E::V>, patch: usize, image: E::V) -> Result<E::V> {
    let patches = e.patchify(image, patch)?;
    proj.forward(e, patches)
}

/// Feature-map tokens `[N × D]` from the convolution stem.
pub fn hybrid_stem<E: Exec>(e: &mut E, convs: &[Conv2d<E::V>], image: E::V) -> Result<E::V> {
    let mut x = image;
    for (i, conv) in convs.iter().enumerate() {
        if i > 0 {
            x = e.relu(x);
        }
        x = conv.forward(e, x)?;
    }
    let [d, gh, gw] = *e.shape(x) else {
        return Err(Error::shape("hybrid_stem", e.shape(x), &[0, 0, 0]));
    };
    let flat = e.reshape(x, &[d, gh * gw])?;
    e.transpose(flat)
}

/// Prepends the class token and adds the positional table.
pub fn add_class_and_position<E: Exec>(e: &mut E, tokens: E::V, cls: E::V, pos: E::V) -> Result<E::V> {
    let seq = e.concat_rows(cls, tokens)?;
    e.add(seq, pos)
}

/// Multi-head self-attention over all tokens of `x[T × D]`.
pub fn attention<E: Exec>(e: &mut E, layer: &EncoderLayer<E::V>, x: E::V) -> Result<E::V> {
    let d = e.shape(x)[1];
    let hd = d / layer.heads;
    let qkv = layer.qkv.forward(e, x)?;
    let scale = 1.0 / libm::sqrt(hd as f64);
    let mut merged = None;
    for h in 0..layer.heads {
        let q = e.slice_cols(qkv, h * hd, hd)?;
        let k = e.slice_cols(qkv, d + h * hd, hd)?;
        let v = e.slice_cols(qkv, 2 * d + h * hd, hd)?;
        let kt = e.transpose(k)?;
        let scores = e.matmul(q, kt)?;
        let scores = e.scale(scores, scale);
        let weights = e.softmax(scores, 1)?;
        let out = e.matmul(weights, v)?;
        merged = Some(match merged {
            None => out,
            Some(m) => e.concat_cols(m, out)?,
        });
    }
    let merged = merged.ok_or_else(|| Error::config("attention needs at least one head"))?;
    layer.proj.forward(e, merged)
}

/// Pre-norm layer: `x + MHA(LN(x))`, then `x + MLP(LN(x))` with GELU.
pub fn transformer_layer<E: Exec>(e: &mut E, layer: &EncoderLayer<E::V>, x: E::V) -> Result<E::V> {
    let h = layer.norm1.forward(e, x)?;
    let a = attention(e, layer, h)?;
    let x = e.add(x, a)?;
    let h = layer.norm2.forward(e, x)?;
    let h = layer.fc1.forward(e, h)?;
    let h = e.gelu(h);
    let h = layer.fc2.forward(e, h)?;
    e.add(x, h)
}

/// Token sequence `[(N+1) × D]` entering the first layer.
pub fn embed<E: Exec>(e: &mut E, w: &EncoderWeights<E::V>, image: E::V) -> Result<E::V> {
    check_image(e, image, w.input)?;
    let tokens = match &w.embed {
        Embed::Patch { proj, patch } => patch_embed(e, proj, *patch, image)?,
        Embed::Stem { convs } => hybrid_stem(e, convs, image)?,
    };
    add_class_and_position(e, tokens, w.cls, w.pos)
}

/// Outputs of the four tapped layers, each `[(N+1) × D]`.
pub fn encode<E: Exec>(e: &mut E, w: &EncoderWeights<E::V>, image: E::V) -> Result<[E::V; 4]> {
    let mut x = embed(e, w, image)?;
    let mut taps = Vec::with_capacity(4);
    for (i, layer) in w.layers.iter().enumerate() {
        x = transformer_layer(e, layer, x)?;
        if w.taps.contains(&i) {
            taps.push(x);
        }
        if i == w.taps[3] {
            break;
        }
    }
    taps.try_into()
        .map_err(|_| Error::config("encoder produced fewer than four taps"))
}
