//! Named finite-difference suites over single ops, the encoder and the full
//! model.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FiniteDifference, GradCheck};
use crate::assemble::readout_project;
use crate::config::{Embedding, ModelConfig, Variant};
use crate::encoder::{encode, transformer_layer, EncoderLayer, EncoderWeights};
use crate::error::{Error, Result};
use crate::fusion::{clft_forward, param_specs, rcu, ClftWeights, Rcu};
use crate::graph::{Exec, OpKind, Tape, Var, VOID};
use crate::layers::Linear;
use crate::params::{ParamSpec, ParamStore, SpecCollector, VarList};
use crate::tensor::Tensor;

/// Maximum relative error accepted by every suite.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Every differentiable op plus small composite blocks.
    Ops,
    /// A transformer layer and the full toy encoder.
    Encoder,
    /// The toy model end to end with the segmentation loss.
    Full,
}

impl core::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ops" => Ok(Scope::Ops),
            "encoder" => Ok(Scope::Encoder),
            "full" => Ok(Scope::Full),
            other => Err(Error::Usage(format!(
                "unknown scope {other}; expected ops, encoder or full"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: String,
    pub check: GradCheck,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.check.passes(GRADIENT_TOLERANCE)
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| scale * (2.0 * rng.gen::<f64>() - 1.0))
}

/// Values bounded away from zero, so ReLU kinks are never straddled.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = 0.1 + rng.gen::<f64>();
        if rng.gen::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// `Σ out ⊙ R / √n` for a fixed random `R`, so outputs with a constant plain
/// sum (softmax, normalization) still yield informative gradients. The
/// scaling keeps the objective, and with it the rounding noise of the
/// numeric derivative, of order one.
fn weighted(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(out).to_vec();
    let scale = 1.0 / libm::sqrt(crate::tensor::numel(&shape) as f64);
    let r = tape.constant(random(&mut rng, &shape, scale));
    let p = tape.mul(out, r)?;
    Ok(tape.sum(p))
}

type Case = (&'static str, Vec<Tensor>, fn(&mut Tape, &[Var]) -> Result<Var>);

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let mut cases: Vec<Case> = Vec::new();
    let mut add = |name, inputs, f| cases.push((name, inputs, f));
    add(
        "matmul",
        vec![random(rng, &[4, 4], 1.0), random(rng, &[4, 4], 1.0)],
        |t, v| t.matmul(v[0], v[1]),
    );
    add(
        "matmul_rect",
        vec![random(rng, &[3, 5], 1.0), random(rng, &[5, 2], 1.0)],
        |t, v| t.matmul(v[0], v[1]),
    );
    add(
        "add",
        vec![random(rng, &[3, 4], 1.0), random(rng, &[3, 4], 1.0)],
        |t, v| t.add(v[0], v[1]),
    );
    add(
        "mul",
        vec![random(rng, &[3, 4], 1.0), random(rng, &[3, 4], 1.0)],
        |t, v| t.mul(v[0], v[1]),
    );
    add(
        "add_bias",
        vec![random(rng, &[3, 4], 1.0), random(rng, &[4], 1.0)],
        |t, v| t.add_bias(v[0], v[1]),
    );
    add("scale", vec![random(rng, &[5], 1.0)], |t, v| Ok(t.scale(v[0], -1.7)));
    add("transpose", vec![random(rng, &[3, 5], 1.0)], |t, v| t.transpose(v[0]));
    add("softmax_rows", vec![random(rng, &[4, 6], 2.0)], |t, v| {
        t.softmax(v[0], 1)
    });
    add("softmax_cols", vec![random(rng, &[4, 6], 2.0)], |t, v| {
        t.softmax(v[0], 0)
    });
    add("gelu", vec![random(rng, &[16], 3.0)], |t, v| Ok(t.gelu(v[0])));
    add("relu", vec![off_kink(rng, &[16])], |t, v| Ok(t.relu(v[0])));
    add(
        "layer_norm",
        vec![
            random(rng, &[4, 6], 2.0),
            random(rng, &[6], 1.0),
            random(rng, &[6], 1.0),
        ],
        |t, v| t.layer_norm(v[0], v[1], v[2]),
    );
    add(
        "conv2d_k3_s1_p1",
        vec![
            random(rng, &[2, 5, 5], 1.0),
            random(rng, &[3, 2, 3, 3], 1.0),
            random(rng, &[3], 1.0),
        ],
        |t, v| t.conv2d(v[0], v[1], Some(v[2]), 1, 1),
    );
    add(
        "conv2d_k4_s2_p1",
        vec![random(rng, &[2, 6, 6], 1.0), random(rng, &[2, 2, 4, 4], 1.0)],
        |t, v| t.conv2d(v[0], v[1], None, 2, 1),
    );
    add(
        "conv2d_pointwise",
        vec![
            random(rng, &[3, 4, 4], 1.0),
            random(rng, &[2, 3, 1, 1], 1.0),
            random(rng, &[2], 1.0),
        ],
        |t, v| t.conv2d(v[0], v[1], Some(v[2]), 1, 0),
    );
    add(
        "conv_transpose2d_k2_s2",
        vec![
            random(rng, &[2, 3, 3], 1.0),
            random(rng, &[2, 3, 2, 2], 1.0),
            random(rng, &[3], 1.0),
        ],
        |t, v| t.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 0),
    );
    add(
        "conv_transpose2d_k4_s2_p1",
        vec![random(rng, &[2, 3, 3], 1.0), random(rng, &[2, 2, 4, 4], 1.0)],
        |t, v| t.conv_transpose2d(v[0], v[1], None, 2, 1),
    );
    add("slice_rows", vec![random(rng, &[5, 3], 1.0)], |t, v| {
        t.slice_rows(v[0], 1, 3)
    });
    add("slice_cols", vec![random(rng, &[3, 5], 1.0)], |t, v| {
        t.slice_cols(v[0], 2, 2)
    });
    add("repeat_row", vec![random(rng, &[3, 4], 1.0)], |t, v| {
        t.repeat_row(v[0], 0, 5)
    });
    add(
        "concat_rows",
        vec![random(rng, &[2, 3], 1.0), random(rng, &[4, 3], 1.0)],
        |t, v| t.concat_rows(v[0], v[1]),
    );
    add(
        "concat_cols",
        vec![random(rng, &[3, 2], 1.0), random(rng, &[3, 4], 1.0)],
        |t, v| t.concat_cols(v[0], v[1]),
    );
    add("reshape", vec![random(rng, &[2, 6], 1.0)], |t, v| {
        t.reshape(v[0], &[3, 2, 2])
    });
    add("patchify", vec![random(rng, &[2, 4, 6], 1.0)], |t, v| {
        t.patchify(v[0], 2)
    });
    add("sum", vec![random(rng, &[3, 3], 1.0)], |t, v| Ok(t.sum(v[0])));
    add("cross_entropy", vec![random(rng, &[3, 4, 4], 2.0)], |t, v| {
        let mut mask = [0u8, 1, 2, VOID].repeat(4);
        mask.rotate_left(1);
        t.cross_entropy(v[0], &mask, &[0.5, 2.0, 1.5])
    });
    add(
        "rcu",
        vec![
            random(rng, &[3, 4, 4], 1.0),
            random(rng, &[3, 3, 3, 3], 0.3),
            random(rng, &[3, 3, 3, 3], 0.3),
        ],
        |t, v| {
            let p = Rcu {
                conv1: crate::layers::Conv2d {
                    weight: v[1],
                    bias: None,
                    stride: 1,
                    pad: 1,
                },
                conv2: crate::layers::Conv2d {
                    weight: v[2],
                    bias: None,
                    stride: 1,
                    pad: 1,
                },
            };
            rcu(t, &p, v[0])
        },
    );
    add(
        "readout_project",
        vec![
            random(rng, &[5, 3], 1.0),
            random(rng, &[6, 3], 0.5),
            random(rng, &[3], 0.5),
        ],
        |t, v| {
            readout_project(
                t,
                &Linear {
                    weight: v[1],
                    bias: v[2],
                },
                v[0],
            )
        },
    );
    cases
}

fn run_cases(cases: Vec<Case>, fd: &FiniteDifference) -> Result<Vec<CaseResult>> {
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, inputs, f))| {
            let seed = 1000 + i as u64;
            let check = fd.check(
                |t, v| {
                    let out = f(t, v)?;
                    weighted(t, out, seed)
                },
                &inputs,
            )?;
            Ok(CaseResult {
                name: name.into(),
                check,
            })
        })
        .collect()
}

/// Toy geometry with narrow widths, so end-to-end checks stay fast.
pub fn gradcheck_config() -> ModelConfig {
    let mut cfg = ModelConfig::preset(Variant::Toy);
    cfg.fusion_dim = 8;
    cfg
}

/// Parameter values for a check. Projection matrices are redrawn at
/// `1/√fan_in` and every value is jittered, so signals reach all layers at
/// comparable magnitudes (the training init attenuates the encoder by
/// orders of magnitude, which buries its gradients in rounding noise).
fn store_inputs(specs: &[ParamSpec], seed: u64) -> Result<Vec<Tensor>> {
    let mut store = ParamStore::from_specs(specs, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for (spec, t) in specs.iter().zip(store.tensors_mut()) {
        if spec.shape.len() == 2 && spec.name.ends_with(".weight") {
            let scale = libm::sqrt(3.0 / spec.shape[0] as f64);
            for v in t.data_mut() {
                *v = scale * (2.0 * rng.gen::<f64>() - 1.0);
            }
        } else {
            for v in t.data_mut() {
                *v += 0.1 * (2.0 * rng.gen::<f64>() - 1.0);
            }
        }
    }
    Ok(store.tensors().to_vec())
}

fn encoder_cases(fd: &FiniteDifference) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // One layer on 8 tokens, every element checked.
    let (d, heads) = (8, 2);
    let mut specs = SpecCollector::default();
    EncoderLayer::declare(&mut specs, "layer", d, heads)?;
    let mut inputs = vec![random(&mut rng, &[8, d], 1.0)];
    inputs.extend(store_inputs(&specs.specs, 3)?.into_iter().map(|t| {
        let s = t.shape().to_vec();
        let mut r = ChaCha8Rng::seed_from_u64(s.iter().product::<usize>() as u64);
        Tensor::from_fn(&s, |i| t.data()[i] + 0.3 * (2.0 * r.gen::<f64>() - 1.0))
    }));
    let check = fd.check(
        |t, v| {
            let layer = EncoderLayer::declare(&mut VarList::new(&v[1..]), "layer", d, heads)?;
            let y = transformer_layer(t, &layer, v[0])?;
            weighted(t, y, 11)
        },
        &inputs,
    )?;
    out.push(CaseResult {
        name: "transformer_layer".into(),
        check,
    });

    // The toy encoder (patch and stem embeddings), sampled elements.
    for embedding in [Embedding::Patch, Embedding::ConvStem] {
        let mut cfg = gradcheck_config().encoder;
        cfg.embedding = embedding;
        let mut specs = SpecCollector::default();
        EncoderWeights::declare(&mut specs, "enc", &cfg)?;
        let mut inputs = vec![random(&mut rng, &[3, cfg.input.0, cfg.input.1], 1.0)];
        inputs.extend(store_inputs(&specs.specs, 5)?);
        let sampled = FiniteDifference {
            max_per_input: Some(fd.max_per_input.unwrap_or(2)),
            eps: 1e-3,
            fourth_order: true,
            ..fd.clone()
        };
        let check = sampled.check(
            |t, v| {
                let w = EncoderWeights::declare(&mut VarList::new(&v[1..]), "enc", &cfg)?;
                let taps = encode(t, &w, v[0])?;
                let mut acc = weighted(t, taps[0], 20)?;
                for (k, &tap) in taps.iter().enumerate().skip(1) {
                    let s = weighted(t, tap, 20 + k as u64)?;
                    acc = t.add(acc, s)?;
                }
                Ok(acc)
            },
            &inputs,
        )?;
        let name = match embedding {
            Embedding::Patch => "encoder_toy",
            Embedding::ConvStem => "encoder_toy_stem",
        };
        out.push(CaseResult {
            name: name.into(),
            check,
        });
    }
    Ok(out)
}

/// Synthetic targets with a void band, for the end-to-end loss.
fn full_mask(h: usize, w: usize) -> Vec<u8> {
    (0..h * w)
        .map(|i| {
            let (r, c) = (i / w, i % w);
            if r % 16 == 5 {
                VOID
            } else {
                ((r / 12 + c / 20) % 3) as u8
            }
        })
        .collect()
}

fn full_cases(fd: &FiniteDifference) -> Result<Vec<CaseResult>> {
    let cfg = gradcheck_config();
    let specs = param_specs(&cfg)?;
    let (h, w) = cfg.input();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut inputs = vec![random(&mut rng, &[3, h, w], 1.0), random(&mut rng, &[3, h, w], 1.0)];
    inputs.extend(store_inputs(&specs, 17)?);
    let mask = full_mask(h, w);
    let sampled = FiniteDifference {
        max_per_input: Some(fd.max_per_input.unwrap_or(1)),
        eps: 1e-4,
        fourth_order: true,
        ..fd.clone()
    };
    let check = sampled.check(
        |t, v| {
            let weights = ClftWeights::declare(&mut VarList::new(&v[2..]), &cfg)?;
            let out = clft_forward(t, &weights, Some(v[0]), Some(v[1]))?;
            t.cross_entropy(out.logits, &mask, &[0.7, 1.3, 1.0])
        },
        &inputs,
    )?;
    Ok(vec![CaseResult {
        name: "clft_toy_fusion".into(),
        check,
    }])
}

/// Runs one scope. `fault` scales the analytic gradient of one op kind,
/// serving as a negative control.
pub fn run_scope(scope: Scope, fault: Option<(OpKind, f64)>) -> Result<Vec<CaseResult>> {
    let fd = FiniteDifference {
        fault,
        ..FiniteDifference::default()
    };
    match scope {
        Scope::Ops => run_cases(op_cases(&mut ChaCha8Rng::seed_from_u64(1)), &fd),
        Scope::Encoder => encoder_cases(&fd),
        Scope::Full => full_cases(&fd),
    }
}
