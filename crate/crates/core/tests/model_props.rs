mod oracles;

use clft_core::assemble::{readout_project, spatialize, ResampleFactor};
use clft_core::config::{EncoderConfig, ModelConfig, Variant};
use clft_core::encoder::{encode, EncoderWeights};
use clft_core::fusion::{active_streams, clft_forward, param_specs, ClftWeights, Modality};
use clft_core::geometry::ClassMask;
use clft_core::layers::Linear;
use clft_core::params::{Init, ParamStore, SpecCollector, TapeBinder, TraceBinder};
use clft_core::training::{predict, Sample};
use clft_core::{Error, Exec, ShapeTracer, Tape, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| scale * rng.gen_range(-1.0..1.0))
}

/// Traces the full network and returns every record plus the named outputs.
fn trace(cfg: &ModelConfig) -> (ShapeTracer, Vec<Vec<usize>>) {
    let mut tracer = ShapeTracer::new();
    let mut binder = TraceBinder {
        tracer: &mut tracer,
        scalars: 0,
    };
    let w = ClftWeights::declare(&mut binder, cfg).unwrap();
    let (h, wd) = cfg.input();
    let rgb = tracer.input(&[3, h, wd]);
    let planes = tracer.input(&[3, h, wd]);
    let out = clft_forward(&mut tracer, &w, Some(rgb), Some(planes)).unwrap();
    let mut shapes = Vec::new();
    for taps in [out.camera_taps.unwrap(), out.lidar_taps.unwrap()] {
        shapes.extend(taps.iter().map(|&t| tracer.shape(t).to_vec()));
    }
    for maps in [out.camera_maps.unwrap(), out.lidar_maps.unwrap()] {
        shapes.extend(maps.iter().map(|m| tracer.shape(m.value).to_vec()));
    }
    shapes.push(tracer.shape(out.logits).to_vec());
    (tracer, shapes)
}

#[test]
fn full_size_shapes() {
    for (variant, taps, dim) in [
        (Variant::Base, [2, 5, 8, 11], 768),
        (Variant::Large, [5, 11, 17, 23], 1024),
    ] {
        let cfg = ModelConfig::preset(variant);
        assert_eq!(cfg.encoder.num_patches(), 576);
        assert_eq!(cfg.encoder.taps.unwrap(), taps);
        let (tracer, shapes) = trace(&cfg);
        for t in &shapes[..8] {
            assert_eq!(t, &vec![577, dim]);
        }
        let extents = [96, 48, 24, 12];
        for (i, m) in shapes[8..16].iter().enumerate() {
            assert_eq!(m, &vec![256, extents[i % 4], extents[i % 4]]);
        }
        assert_eq!(shapes[16], vec![3, 384, 384]);
        assert!(tracer.records().iter().all(|r| r.shape.iter().all(|&e| e > 0)));
        // The patch projection produces the 576 tokens.
        assert!(tracer.records().iter().any(|r| r.shape == vec![576, dim]));
    }
}

#[test]
fn hybrid_and_toy_shapes() {
    let cfg = ModelConfig::preset(Variant::Hybrid);
    let (_, shapes) = trace(&cfg);
    assert_eq!(shapes[8], vec![256, 96, 96]);
    let cfg = ModelConfig::preset(Variant::Toy);
    let (_, shapes) = trace(&cfg);
    assert_eq!(shapes[16], vec![3, 96, 96]);
    assert_eq!(shapes[11], vec![256, 3, 3]);
}

#[test]
fn resample_factors() {
    assert_eq!(ResampleFactor::new(16, 4).unwrap().apply(24), 96);
    assert_eq!(ResampleFactor::new(16, 16).unwrap().apply(24), 24);
    assert_eq!(ResampleFactor::new(16, 32).unwrap().apply(24), 12);
    assert!(ResampleFactor::new(16, 3).is_err());
}

#[test]
fn huge_needs_explicit_taps() {
    let mut cfg = EncoderConfig::preset(Variant::Huge);
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    cfg.taps = Some([7, 15, 23, 31]);
    cfg.validate().unwrap();
}

#[test]
fn modality_requires_its_inputs() {
    let rgb = Tensor::full(&[3, 4, 4], 1.0);
    assert!(matches!(
        active_streams(Modality::Lidar, Some(&rgb), None),
        Err(Error::Usage(_))
    ));
    assert!(matches!(
        active_streams(Modality::Fusion, Some(&rgb), None),
        Err(Error::Usage(_))
    ));
    let (r, l) = active_streams(Modality::Camera, Some(&rgb), None).unwrap();
    assert!(r.is_some() && l.is_none());
}

fn jittered_store(cfg: &ModelConfig, seed: u64) -> ParamStore {
    let mut store = ParamStore::from_specs(&param_specs(cfg).unwrap(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(!seed);
    for t in store.tensors_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v += 0.05 * rng.gen_range(-1.0..1.0));
    }
    store
}

#[test]
fn camera_mode_equals_fusion_with_zero_planes() {
    let mut cfg = ModelConfig::preset(Variant::Toy);
    cfg.fusion_dim = 8;
    let mask = ClassMask::filled(96, 96, 0);
    for seed in 0..3 {
        let store = jittered_store(&cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rgb = random(&mut rng, &[3, 96, 96], 1.0);
        let camera = Sample {
            rgb: Some(rgb.clone()),
            lidar: None,
            mask: mask.clone(),
        };
        let fused = Sample {
            rgb: Some(rgb),
            lidar: Some(Tensor::zeros(&[3, 96, 96])),
            mask: mask.clone(),
        };
        let a = predict(&cfg, &store, &camera, Modality::Camera).unwrap();
        let b = predict(&cfg, &store, &fused, Modality::Fusion).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn permuting_patches_permutes_tapped_tokens() {
    let cfg = EncoderConfig::preset(Variant::Toy);
    let mut specs = SpecCollector::default();
    EncoderWeights::declare(&mut specs, "enc", &cfg).unwrap();
    let mut store = ParamStore::from_specs(&specs.specs, 9).unwrap();
    store
        .get_mut("enc.pos_embed")
        .unwrap()
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (h, w) = cfg.input;
    let p = cfg.patch;
    let (gh, gw) = (h / p, w / p);
    let image = random(&mut rng, &[3, h, w], 1.0);
    let mut perm: Vec<usize> = (0..gh * gw).collect();
    perm.shuffle(&mut rng);
    // Patch i of `image` moves to slot perm[i].
    let mut moved = Tensor::zeros(&[3, h, w]);
    for (i, &j) in perm.iter().enumerate() {
        for c in 0..3 {
            for dy in 0..p {
                for dx in 0..p {
                    let src = c * h * w + ((i / gw) * p + dy) * w + (i % gw) * p + dx;
                    let dst = c * h * w + ((j / gw) * p + dy) * w + (j % gw) * p + dx;
                    moved.data_mut()[dst] = image.data()[src];
                }
            }
        }
    }
    let run = |img: Tensor| -> Vec<Tensor> {
        let mut tape = Tape::new();
        let mut binder = TapeBinder::new(&mut tape, &store, false);
        let weights = EncoderWeights::declare(&mut binder, "enc", &cfg).unwrap();
        binder.finish().unwrap();
        let x = tape.constant(img);
        let taps = encode(&mut tape, &weights, x).unwrap();
        taps.iter().map(|&t| tape.value(t).clone()).collect()
    };
    let (a, b) = (run(image), run(moved));
    let d = cfg.dim;
    for (ta, tb) in a.iter().zip(&b) {
        let row = |t: &Tensor, r: usize| t.data()[r * d..(r + 1) * d].to_vec();
        let close = |x: Vec<f64>, y: Vec<f64>| x.iter().zip(&y).all(|(u, v)| (u - v).abs() < 1e-9);
        assert!(close(row(ta, 0), row(tb, 0)));
        for (i, &j) in perm.iter().enumerate() {
            assert!(close(row(ta, 1 + i), row(tb, 1 + j)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn readout_matches_loop_oracle(seed in any::<u64>(), n in 1usize..12, d in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = random(&mut rng, &[n + 1, d], 2.0);
        let weight = random(&mut rng, &[2 * d, d], 1.0);
        let bias = random(&mut rng, &[d], 1.0);
        let mut tape = Tape::new();
        let lin = Linear { weight: tape.constant(weight.clone()), bias: tape.constant(bias.clone()) };
        let s = tape.constant(seq.clone());
        let out = readout_project(&mut tape, &lin, s).unwrap();
        let expect = oracles::readout(&seq, &weight, &bias);
        prop_assert_eq!(tape.value(out).shape(), expect.shape());
        prop_assert!(tape.value(out).max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn spatialize_places_token_channels(seed in any::<u64>(), gh in 1usize..6, gw in 1usize..6, d in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tokens = random(&mut rng, &[gh * gw, d], 1.0);
        let mut tape = Tape::new();
        let t = tape.constant(tokens.clone());
        let m = spatialize(&mut tape, t, (gh, gw)).unwrap();
        let map = tape.value(m);
        prop_assert_eq!(map.shape(), &[d, gh, gw]);
        for i in 0..gh * gw {
            for c in 0..d {
                prop_assert_eq!(map.at(&[c, i / gw, i % gw]), tokens.at(&[i, c]));
            }
        }
    }
}

#[test]
fn declared_parameter_counts_agree() {
    let cfg = ModelConfig::preset(Variant::Toy);
    let specs = param_specs(&cfg).unwrap();
    let mut tracer = ShapeTracer::new();
    let mut binder = TraceBinder {
        tracer: &mut tracer,
        scalars: 0,
    };
    ClftWeights::declare(&mut binder, &cfg).unwrap();
    let total: usize = specs.iter().map(|s| s.shape.iter().product::<usize>()).sum();
    assert_eq!(binder.scalars, total);
    assert!(specs.iter().any(|s| s.init == Init::NearestUpsample));
}
