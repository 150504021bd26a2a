//! Subcommand implementations. Each returns `Ok(())` only when it took no
//! error path; `main` maps errors to exit codes.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use clft_core::config::Variant;
use clft_core::evaluation::{stratified_report, ConfusionState, Report, SubsetTag};
use clft_core::fusion::{argmax_mask, param_specs, Modality};
use clft_core::geometry::{boxes_to_mask, densify, filter_and_populate, ClassMask};
use clft_core::gradcheck::{run_scope, Scope};
use clft_core::graph::OpKind;
use clft_core::params::ParamStore;
use clft_core::synthetic::{generate, SceneConfig, Separability};
use clft_core::training::{fit, predict, Sample};
use clft_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::bench::time_inference;
use crate::checkpoint::{Checkpoint, Split, TrainingInfo};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::formats::{mask_to_tensor, read_boxes, read_cloud, read_rig, write_json, write_text};
use crate::images::{mask_bytes, overlay_bytes, proportional_gray, write_gray, write_rgb};
use crate::run_config::RunConfig;
use crate::tensor_io::save_tensor;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Point cloud, one `x y z` per line, LiDAR frame.
    pub cloud: PathBuf,
    /// Sensor rig JSON.
    pub rig: PathBuf,
    pub out_dir: PathBuf,
    /// Densification radius in pixels; absent means no densification.
    #[arg(long)]
    pub dilate: Option<usize>,
}

/// Writes `xy`, `yz`, `xz` and `occupied` as `[h×w]` tensors plus a
/// grayscale preview of each coordinate plane.
pub fn project(a: &ProjectArgs) -> Result<()> {
    let cloud = read_cloud(&a.cloud)?;
    let rig = read_rig(&a.rig)?;
    let planes = densify(&filter_and_populate(&cloud, &rig), a.dilate.unwrap_or(0));
    let (w, h) = rig.resolution;
    create_dir(&a.out_dir)?;
    for (name, values) in [("xy", &planes.xy), ("yz", &planes.yz), ("xz", &planes.xz)] {
        save_tensor(
            &a.out_dir.join(format!("{name}.tensor")),
            &Tensor::new(&[h, w], values.clone())?,
        )?;
        let gray = proportional_gray(values, &planes.occupied);
        write_gray(&a.out_dir.join(format!("{name}.png")), w, h, &gray)?;
    }
    let occupied = planes.occupied.iter().map(|&o| f64::from(u8::from(o))).collect();
    save_tensor(&a.out_dir.join("occupied.tensor"), &Tensor::new(&[h, w], occupied)?)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct MakeMasksArgs {
    pub cloud: PathBuf,
    /// Box list JSON.
    pub boxes: PathBuf,
    pub rig: PathBuf,
    pub out_dir: PathBuf,
}

/// Writes `mask.tensor` (class codes, 255 for void) and `mask.png`.
pub fn make_masks(a: &MakeMasksArgs) -> Result<()> {
    let cloud = read_cloud(&a.cloud)?;
    let boxes = read_boxes(&a.boxes)?;
    let rig = read_rig(&a.rig)?;
    let mask = boxes_to_mask(&cloud, &boxes, &rig);
    create_dir(&a.out_dir)?;
    save_tensor(&a.out_dir.join("mask.tensor"), &mask_to_tensor(&mask))?;
    write_rgb(&a.out_dir.join("mask.png"), mask.width, mask.height, &mask_bytes(&mask))
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// color, depth or joint.
    #[arg(long, default_value = "color")]
    pub separability: Separability,
    #[arg(long, default_value_t = 96)]
    pub width: usize,
    #[arg(long, default_value_t = 96)]
    pub height: usize,
    /// Densification radius for the cached planes.
    #[arg(long)]
    pub dilate: Option<usize>,
}

pub fn gen_synthetic(a: &GenSyntheticArgs) -> Result<()> {
    let mut scene = SceneConfig::new(a.width, a.height, a.separability);
    scene.dilation = a.dilate.unwrap_or(scene.dilation);
    let frames = generate(&scene, a.frames, a.seed)?;
    Dataset::create(&a.out, &frames, &scene.rig(), scene.dilation)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration JSON; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub modality: Option<Modality>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Disable random horizontal flips.
    #[arg(long)]
    pub no_augment: bool,
}

impl TrainArgs {
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut rc = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.variant {
            rc.model.variant = v;
        }
        let t = &mut rc.train;
        t.modality = self.modality.unwrap_or(t.modality);
        t.seed = self.seed.unwrap_or(t.seed);
        t.max_epochs = self.max_epochs.unwrap_or(t.max_epochs);
        t.max_steps = self.max_steps.or(t.max_steps);
        t.patience = self.patience.unwrap_or(t.patience);
        t.batch = self.batch.unwrap_or(t.batch);
        t.l0 = self.lr.unwrap_or(t.l0);
        t.augment &= !self.no_augment;
        let p = &mut rc.paths;
        p.dataset = self.dataset.clone().or(p.dataset.take());
        p.checkpoint = self.checkpoint.clone().or(p.checkpoint.take());
        p.log = self.log.clone().or(p.log.take());
        Ok(rc)
    }
}

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Usage(format!("no {what} path given in the config or on the command line")))
}

fn check_geometry(model_input: (usize, usize), ds: &Dataset) -> Result<()> {
    let (w, h) = ds.rig().resolution;
    if model_input != (h, w) {
        return Err(Error::Usage(format!(
            "model input {}x{} does not match the dataset's {h}x{w} images",
            model_input.0, model_input.1
        )));
    }
    Ok(())
}

/// Trains, streaming one JSON line per epoch to the log, then writes the
/// best parameters as a checkpoint.
pub fn train(a: &TrainArgs) -> Result<()> {
    let rc = a.run_config()?;
    let model = rc.validate()?;
    let ds = Dataset::open(required(&rc.paths.dataset, "dataset")?)?;
    let ckpt_dir = required(&rc.paths.checkpoint, "checkpoint")?;
    let log_path = required(&rc.paths.log, "log")?;
    if rc.rig.as_ref().is_some_and(|r| r != ds.rig()) {
        return Err(Error::Usage("configured rig differs from the dataset's rig".into()));
    }
    check_geometry(model.input(), &ds)?;
    let frames: Vec<usize> = (0..ds.len()).filter(|&i| rc.keeps(ds.tag(i))).collect();
    let data = frames
        .iter()
        .map(|&i| ds.sample(i, rc.train.modality))
        .collect::<Result<Vec<Sample>>>()?;
    let init = ParamStore::from_specs(&param_specs(&model)?, rc.train.seed)?;

    if let Some(parent) = log_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let file = File::create(log_path).map_err(|e| Error::io(log_path, e))?;
    let mut log = BufWriter::new(file);
    let mut log_err = None;
    let outcome = fit(&model, init, &data, &rc.train, |rec| {
        if log_err.is_some() {
            return;
        }
        let line = serde_json::to_string(rec).expect("epoch records serialize");
        eprintln!(
            "epoch {} lr {:.3e} train {:.6} val {:.6}",
            rec.epoch, rec.lr, rec.train_loss, rec.val_loss
        );
        if let Err(e) = writeln!(log, "{line}").and_then(|()| log.flush()) {
            log_err = Some(e);
        }
    });
    if let Some(e) = log_err {
        return Err(Error::io(log_path, e));
    }
    let out = outcome?;
    let global = |idx: &[usize]| idx.iter().map(|&k| frames[k]).collect();
    let info = TrainingInfo {
        seed: rc.train.seed,
        modality: rc.train.modality,
        best_epoch: out.best_epoch,
        steps: out.steps,
        class_weights: out.weights,
        split: Split {
            train: global(&out.split.0),
            val: global(&out.split.1),
            test: global(&out.split.2),
        },
    };
    Checkpoint {
        model,
        store: out.best,
        training: Some(info),
    }
    .save(ckpt_dir)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// C, L or C+L; defaults to the modality the checkpoint was trained with.
    #[arg(long)]
    pub modality: Option<Modality>,
    /// Frames to evaluate. Split membership comes from the checkpoint.
    #[arg(long, value_enum, default_value_t = SplitChoice::All)]
    pub split: SplitChoice,
}

fn report_json(report: &Report) -> serde_json::Value {
    let rows: Vec<_> = report
        .rows
        .iter()
        .map(|r| {
            let m = |k: usize| {
                let c = &r.classes[k];
                json!({ "iou": c.iou, "precision": c.precision, "recall": c.recall })
            };
            json!({ "subset": r.subset, "counts": r.counts, "vehicle": m(0), "human": m(1) })
        })
        .collect();
    json!({ "modality": report.modality, "rows": rows })
}

/// Writes `report.json`, `report.txt`, `predictions/frame_%06d.png`
/// (palette colors only) and, where the frame has an image,
/// `overlays/frame_%06d.png` (prediction blended onto the RGB frame).
pub fn eval(a: &EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let ds = Dataset::open(&a.dataset)?;
    check_geometry(ckpt.model.input(), &ds)?;
    let modality = a
        .modality
        .or(ckpt.training.as_ref().map(|t| t.modality))
        .unwrap_or(Modality::Fusion);
    let frames: Vec<usize> = match (a.split, &ckpt.training) {
        (SplitChoice::All, _) => (0..ds.len()).collect(),
        (_, None) => return Err(Error::Usage("the checkpoint records no split; use --split all".into())),
        (SplitChoice::Train, Some(t)) => t.split.train.clone(),
        (SplitChoice::Val, Some(t)) => t.split.val.clone(),
        (SplitChoice::Test, Some(t)) => t.split.test.clone(),
    };
    if let Some(&bad) = frames.iter().find(|&&i| i >= ds.len()) {
        return Err(Error::Usage(format!(
            "split names frame {bad}, but the dataset has {}",
            ds.len()
        )));
    }
    let pred_dir = a.out.join("predictions");
    let overlay_dir = a.out.join("overlays");
    create_dir(&pred_dir)?;
    create_dir(&overlay_dir)?;

    let mut states: BTreeMap<SubsetTag, ConfusionState> = BTreeMap::new();
    for &i in &frames {
        let sample = ds.sample(i, modality)?;
        let pred: ClassMask = argmax_mask(&predict(&ckpt.model, &ckpt.store, &sample, modality)?)?;
        states.entry(ds.tag(i)).or_default().accumulate(&pred, &sample.mask)?;
        let name = format!("frame_{i:06}.png");
        write_rgb(&pred_dir.join(&name), pred.width, pred.height, &mask_bytes(&pred))?;
        let rgb = match sample.rgb {
            Some(t) => Some(t),
            None if dataset_has_rgb(&ds, i) => Some(ds.rgb(i)?),
            None => None,
        };
        if let Some(rgb) = rgb {
            write_rgb(
                &overlay_dir.join(&name),
                pred.width,
                pred.height,
                &overlay_bytes(&rgb, &pred),
            )?;
        }
    }
    if states.is_empty() {
        return Err(Error::Usage("no frames selected for evaluation".into()));
    }
    let report = stratified_report(modality, &states)?;
    write_json(&a.out.join("report.json"), &report_json(&report))?;
    let text = report.to_text();
    write_text(&a.out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn dataset_has_rgb(ds: &Dataset, i: usize) -> bool {
    crate::dataset::frame_path(&ds.dir, i, "rgb").exists()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScopeChoice {
    Ops,
    Encoder,
    Full,
}

impl From<ScopeChoice> for Scope {
    fn from(s: ScopeChoice) -> Scope {
        match s {
            ScopeChoice::Ops => Scope::Ops,
            ScopeChoice::Encoder => Scope::Encoder,
            ScopeChoice::Full => Scope::Full,
        }
    }
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = ScopeChoice::Ops)]
    pub scope: ScopeChoice,
    /// Test hook: scales the analytic gradient of one op kind.
    #[arg(long, hide = true)]
    pub corrupt: Option<OpKind>,
    #[arg(long, hide = true, default_value_t = 1.5)]
    pub corrupt_factor: f64,
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let results = run_scope(a.scope.into(), a.corrupt.map(|k| (k, a.corrupt_factor)))?;
    let mut failed = Vec::new();
    for r in &results {
        let verdict = if r.passed() { "pass" } else { "FAIL" };
        println!(
            "{verdict}  {:<28} max_rel_err {:.3e}  checked {}  skipped {}",
            r.name, r.check.max_rel_err, r.check.checked, r.check.skipped
        );
        if !r.passed() {
            failed.push(r.name.as_str());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Failed(format!("gradient check failed: {}", failed.join(", "))))
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Take the input from frame `--frame` of this dataset instead of a
    /// seeded random input.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    #[arg(long)]
    pub modality: Option<Modality>,
    #[arg(long, default_value_t = 50)]
    pub warmup: usize,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let modality = a
        .modality
        .or(ckpt.training.as_ref().map(|t| t.modality))
        .unwrap_or(Modality::Fusion);
    let (h, w) = ckpt.model.input();
    let sample = match &a.dataset {
        Some(dir) => {
            let ds = Dataset::open(dir)?;
            check_geometry((h, w), &ds)?;
            if a.frame >= ds.len() {
                return Err(Error::Usage(format!("frame {} is out of range", a.frame)));
            }
            ds.sample(a.frame, modality)?
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let mut image = || Tensor::from_fn(&[3, h, w], |_| rng.gen::<f64>());
            Sample {
                rgb: Some(image()),
                lidar: Some(image()),
                mask: ClassMask::filled(w, h, 0),
            }
        }
    };
    let stats = time_inference(&ckpt.model, &ckpt.store, &sample, modality, a.warmup, a.iters)?;
    match &a.out {
        Some(p) => write_json(p, &stats),
        None => {
            println!(
                "{}",
                serde_json::to_string_pretty(&stats).expect("timing stats serialize")
            );
            Ok(())
        }
    }
}
