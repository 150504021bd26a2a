#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clft::checkpoint::Checkpoint;
use clft::formats::{read_cloud, read_rig, write_cloud, write_json};
use clft::images::PALETTE;
use clft::tensor_io::{load_tensor, save_tensor};
use clft_core::config::{ModelConfig, Variant};
use clft_core::fusion::param_specs;
use clft_core::geometry::{PointCloud, SensorRig};
use clft_core::params::ParamStore;
use clft_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn clft(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clft"))
        .current_dir(dir)
        .env("CLFT_THREADS", "2")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn plane_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    ["xy", "yz", "xz", "occupied"]
        .iter()
        .map(|n| (n.to_string(), fs::read(dir.join(format!("{n}.tensor"))).unwrap()))
        .collect()
}

fn small_rig() -> SensorRig {
    SensorRig::forward_facing([0.0, 0.0, 1.5], 20.0, (24, 16))
}

#[test]
fn project_empty_cloud_gives_zero_planes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("empty.txt"), "# no points\n").unwrap();
    write_json(&d.join("rig.json"), &small_rig()).unwrap();
    ok(&clft(d, &["project", "empty.txt", "rig.json", "out"]));
    for (_, bytes) in plane_files(&d.join("out")) {
        let t = clft::tensor_io::read_tensor(&mut bytes.as_slice()).unwrap().unwrap();
        assert_eq!(t.shape(), &[16, 24]);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }
    assert!(d.join("out/xy.png").exists());
}

#[test]
fn dilate_zero_matches_absent_flag() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&clft(
        d,
        &[
            "project",
            fixtures().join("cloud.txt").to_str().unwrap(),
            fixtures().join("rig.json").to_str().unwrap(),
            "a",
        ],
    ));
    ok(&clft(
        d,
        &[
            "project",
            fixtures().join("cloud.txt").to_str().unwrap(),
            fixtures().join("rig.json").to_str().unwrap(),
            "b",
            "--dilate",
            "0",
        ],
    ));
    assert_eq!(plane_files(&d.join("a")), plane_files(&d.join("b")));
    for n in ["xy", "yz", "xz"] {
        assert_eq!(
            fs::read(d.join(format!("a/{n}.png"))).unwrap(),
            fs::read(d.join(format!("b/{n}.png"))).unwrap()
        );
    }
}

#[test]
fn project_matches_golden_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (cloud, rig) = (fixtures().join("cloud.txt"), fixtures().join("rig.json"));
    for r in ["0", "1"] {
        let out = format!("r{r}");
        ok(&clft(
            d,
            &[
                "project",
                cloud.to_str().unwrap(),
                rig.to_str().unwrap(),
                &out,
                "--dilate",
                r,
            ],
        ));
        assert_eq!(
            plane_files(&d.join(&out)),
            plane_files(&fixtures().join(format!("expected_r{r}"))),
            "radius {r}"
        );
    }
}

/// Rebuilds the projection fixture from the brute-force oracle. Run with
/// `cargo test -p clft --test cli -- --ignored` only when the fixture
/// format changes.
#[test]
#[ignore]
fn regenerate_projection_fixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let rig = small_rig();
    let mut pts: Vec<[f64; 3]> = (0..85)
        .map(|_| {
            [
                rng.gen_range(2.0..20.0),
                rng.gen_range(-8.0..8.0),
                rng.gen_range(-1.0..4.0),
            ]
        })
        .collect();
    // Exact duplicates: equal-depth ties resolved by point order.
    for i in 0..15 {
        pts.push(pts[i * 5]);
    }
    let cloud = PointCloud::new(pts).unwrap();
    let root = fixtures();
    fs::create_dir_all(&root).unwrap();
    write_cloud(&root.join("cloud.txt"), &cloud).unwrap();
    write_json(&root.join("rig.json"), &rig).unwrap();
    let cloud = read_cloud(&root.join("cloud.txt")).unwrap();
    let rig = read_rig(&root.join("rig.json")).unwrap();
    let (w, h) = rig.resolution;
    let base = oracles::populate(&cloud, &rig);
    for r in [0, 1] {
        let p = oracles::densify(&base, r);
        let dir = root.join(format!("expected_r{r}"));
        fs::create_dir_all(&dir).unwrap();
        let occupied = p.occupied.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect();
        for (n, v) in [
            ("xy", p.xy.clone()),
            ("yz", p.yz.clone()),
            ("xz", p.xz.clone()),
            ("occupied", occupied),
        ] {
            save_tensor(&dir.join(format!("{n}.tensor")), &Tensor::new(&[h, w], v).unwrap()).unwrap();
        }
    }
}

#[test]
fn make_masks_writes_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let boxes = r#"[{"center": [10.0, 0.0, 1.5], "extents": [4.0, 4.0, 3.0], "heading": 0.0, "class": "vehicle"}]"#;
    fs::write(d.join("boxes.json"), boxes).unwrap();
    fs::write(d.join("cloud.txt"), "9.5 0 1.5\n9.5 0.5 1.5\n30 0 0\n").unwrap();
    write_json(&d.join("rig.json"), &small_rig()).unwrap();
    ok(&clft(d, &["make-masks", "cloud.txt", "boxes.json", "rig.json", "out"]));
    let m = load_tensor(&d.join("out/mask.tensor")).unwrap();
    assert_eq!(m.shape(), &[16, 24]);
    assert!(m.data().contains(&1.0));
    assert!(m.data().iter().all(|&v| [0.0, 1.0, 2.0, 255.0].contains(&v)));
}

#[test]
fn unreadable_input_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = clft(dir.path(), &["project", "missing.txt", "rig.json", "out"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.txt"));
    assert!(out.stdout.is_empty());
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_clft"))
        .current_dir(dir.path())
        .env("CLFT_THREADS", "zero")
        .args(["gradcheck"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

const TINY_CONFIG: &str = r#"{
  "model": {"variant": "toy", "input": [32, 32], "depth": 4, "dim": 16, "heads": 2, "taps": [0, 1, 2, 3], "fusion_dim": 4},
  "train": {"l0": 0.01, "batch": 2, "max_epochs": 4, "patience": 10, "seed": 5},
  "paths": {"dataset": "data", "checkpoint": "ckpt", "log": "log.jsonl"}
}"#;

fn tiny_workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&clft(
        d,
        &[
            "gen-synthetic",
            "--out",
            "data",
            "--frames",
            "10",
            "--seed",
            "1",
            "--width",
            "32",
            "--height",
            "32",
        ],
    ));
    fs::write(d.join("run.json"), TINY_CONFIG).unwrap();
    dir
}

#[test]
fn zero_epochs_write_the_initial_checkpoint() {
    let dir = tiny_workspace();
    let d = dir.path();
    ok(&clft(d, &["train", "--config", "run.json", "--max-epochs", "0"]));
    assert_eq!(fs::read(d.join("log.jsonl")).unwrap(), b"");
    let ckpt = Checkpoint::load(&d.join("ckpt")).unwrap();
    let init = ParamStore::from_specs(&param_specs(&ckpt.model).unwrap(), 5).unwrap();
    assert_eq!(ckpt.store.tensors(), init.tensors());
    let info = ckpt.training.unwrap();
    assert_eq!((info.best_epoch, info.steps), (None, 0));
}

#[test]
fn training_is_reproducible() {
    let dir = tiny_workspace();
    let d = dir.path();
    ok(&clft(d, &["train", "--config", "run.json"]));
    ok(&clft(
        d,
        &[
            "train",
            "--config",
            "run.json",
            "--checkpoint",
            "ckpt2",
            "--log",
            "log2.jsonl",
        ],
    ));
    let log = fs::read(d.join("log.jsonl")).unwrap();
    assert_eq!(log, fs::read(d.join("log2.jsonl")).unwrap());
    assert_eq!(String::from_utf8(log).unwrap().lines().count(), 4);
    for f in ["manifest.json", "weights.bin", "training.json"] {
        assert_eq!(
            fs::read(d.join("ckpt").join(f)).unwrap(),
            fs::read(d.join("ckpt2").join(f)).unwrap()
        );
    }
    // Flags override the config.
    ok(&clft(
        d,
        &[
            "train",
            "--config",
            "run.json",
            "--max-epochs",
            "1",
            "--log",
            "log3.jsonl",
            "--checkpoint",
            "c3",
        ],
    ));
    assert_eq!(fs::read_to_string(d.join("log3.jsonl")).unwrap().lines().count(), 1);
}

fn png_rgb(path: &Path) -> (usize, usize, Vec<u8>) {
    let decoder = png::Decoder::new(fs::File::open(path).unwrap());
    let mut reader = decoder.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).unwrap();
    assert_eq!(info.color_type, png::ColorType::Rgb);
    buf.truncate(info.buffer_size());
    (info.width as usize, info.height as usize, buf)
}

#[test]
fn eval_reproduces_logged_validation_iou() {
    let dir = tiny_workspace();
    let d = dir.path();
    ok(&clft(d, &["train", "--config", "run.json"]));
    let out = clft(
        d,
        &[
            "eval",
            "--checkpoint",
            "ckpt",
            "--dataset",
            "data",
            "--out",
            "ev",
            "--split",
            "val",
        ],
    );
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("all-weather"));

    let info = Checkpoint::load(&d.join("ckpt")).unwrap().training.unwrap();
    let log: Vec<Value> = fs::read_to_string(d.join("log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let logged = &log[info.best_epoch.unwrap()]["val_iou"];
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("ev/report.json")).unwrap()).unwrap();
    let all = report["rows"].as_array().unwrap().last().unwrap();
    assert_eq!(all["subset"], "all-weather");
    for (name, code) in [("vehicle", 1), ("human", 2)] {
        match (all[name]["iou"].as_f64(), logged[code].as_f64()) {
            (Some(a), Some(b)) => assert!((a - b).abs() < 1e-6, "{name}: {a} vs {b}"),
            (a, b) => assert_eq!(a, b, "{name}"),
        }
    }

    // Prediction images use palette colors only; every evaluated frame has one.
    let preds: Vec<_> = fs::read_dir(d.join("ev/predictions")).unwrap().collect();
    assert_eq!(preds.len(), info.split.val.len());
    for i in &info.split.val {
        let (w, h, px) = png_rgb(&d.join(format!("ev/predictions/frame_{i:06}.png")));
        assert_eq!((w, h), (32, 32));
        assert!(px.chunks(3).all(|c| PALETTE.contains(&[c[0], c[1], c[2]])));
        assert!(d.join(format!("ev/overlays/frame_{i:06}.png")).exists());
    }
}

#[test]
fn camera_eval_runs_without_lidar_files() {
    let dir = tiny_workspace();
    let d = dir.path();
    ok(&clft(
        d,
        &["train", "--config", "run.json", "--modality", "C", "--max-epochs", "1"],
    ));
    for entry in fs::read_dir(d.join("data")).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "planes") {
            fs::remove_file(p).unwrap();
        }
    }
    for entry in fs::read_dir(d.join("data")).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "cloud") {
            // Masks are cached, so only the LiDAR planes would need the cloud.
            fs::remove_file(p).unwrap();
        }
    }
    ok(&clft(
        d,
        &[
            "eval",
            "--checkpoint",
            "ckpt",
            "--dataset",
            "data",
            "--out",
            "ev",
            "--modality",
            "C",
        ],
    ));
    let out = clft(
        d,
        &[
            "eval",
            "--checkpoint",
            "ckpt",
            "--dataset",
            "data",
            "--out",
            "ev2",
            "--modality",
            "C+L",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_rejects_mismatched_geometry() {
    let dir = tiny_workspace();
    let d = dir.path();
    ok(&clft(
        d,
        &[
            "gen-synthetic",
            "--out",
            "big",
            "--frames",
            "2",
            "--width",
            "64",
            "--height",
            "64",
        ],
    ));
    ok(&clft(d, &["train", "--config", "run.json", "--max-epochs", "0"]));
    let out = clft(d, &["eval", "--checkpoint", "ckpt", "--dataset", "big", "--out", "ev"]);
    assert_eq!(out.status.code(), Some(2));
    let out = clft(
        d,
        &[
            "eval",
            "--checkpoint",
            "ckpt",
            "--dataset",
            "data",
            "--out",
            "ev",
            "--modality",
            "X",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_ops_pass_and_corruption_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = clft(dir.path(), &["gradcheck", "--scope", "ops"]);
    ok(&out);
    assert!(!String::from_utf8_lossy(&out.stdout).contains("FAIL"));
    let out = clft(dir.path(), &["gradcheck", "--scope", "ops", "--corrupt", "softmax"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL  softmax"));
}

fn save_checkpoint(dir: &Path, model: &ModelConfig) {
    let store = ParamStore::from_specs(&param_specs(model).unwrap(), 0).unwrap();
    Checkpoint {
        model: model.clone(),
        store,
        training: None,
    }
    .save(dir)
    .unwrap();
}

#[test]
fn bench_reports_timing_schema() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut model = ModelConfig::preset(Variant::Toy);
    model.fusion_dim = 4;
    save_checkpoint(&d.join("ckpt"), &model);
    ok(&clft(
        d,
        &[
            "bench",
            "--checkpoint",
            "ckpt",
            "--warmup",
            "1",
            "--iters",
            "1",
            "--out",
            "t.json",
        ],
    ));
    let v: Value = serde_json::from_str(&fs::read_to_string(d.join("t.json")).unwrap()).unwrap();
    let obj = v.as_object().unwrap();
    let mut keys: Vec<_> = obj.keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["mean_ms", "measured", "std_ms", "warmup"]);
    assert_eq!(v["std_ms"], 0.0);
    assert!(v["mean_ms"].as_f64().unwrap() > 0.0);
    assert_eq!((v["warmup"].as_u64(), v["measured"].as_u64()), (Some(1), Some(1)));
    let out = clft(d, &["bench", "--checkpoint", "ckpt", "--warmup", "0", "--iters", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn deeper_encoder_takes_longer() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut times = Vec::new();
    for (name, depth, taps) in [("shallow", 4, [0, 1, 2, 3]), ("deep", 16, [3, 7, 11, 15])] {
        let mut model = ModelConfig::preset(Variant::Toy);
        model.encoder.depth = depth;
        model.encoder.taps = Some(taps);
        model.fusion_dim = 4;
        save_checkpoint(&d.join(name), &model);
        let out = clft(d, &["bench", "--checkpoint", name, "--warmup", "3", "--iters", "15"]);
        ok(&out);
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        times.push(v["mean_ms"].as_f64().unwrap());
    }
    assert!(times[0] < times[1], "{times:?}");
}
