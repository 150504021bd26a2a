//! Loss, schedule, optimizer and the epoch loop.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::evaluation::{ClassMetrics, ConfusionState};
use crate::fusion::{active_streams, argmax_mask, clft_forward, ClftWeights, Modality};
use crate::geometry::ClassMask;
use crate::graph::{Exec, Tape, VOID};
use crate::params::{ParamStore, TapeBinder};
use crate::tensor::Tensor;

pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
pub const DEFAULT_DECAY: f64 = 0.99;
pub const DEFAULT_PATIENCE: usize = 10;
/// Largest ratio between two inverse-frequency class weights.
pub const MAX_WEIGHT_RATIO: f64 = 20.0;

/// Loss value and whether every pixel of the mask was void.
#[derive(Debug, Clone, Copy)]
pub struct Loss<V> {
    pub value: V,
    pub all_void: bool,
}

/// Mean over non-void pixels of `-weights[c]·log softmax(logits)[c]`. An
/// all-void mask gives zero loss and sets `all_void`.
pub fn weighted_cross_entropy<E: Exec>(
    e: &mut E,
    logits: E::V,
    mask: &ClassMask,
    weights: &[f64; NUM_CLASSES],
) -> Result<Loss<E::V>> {
    let value = e.cross_entropy(logits, &mask.codes, weights)?;
    Ok(Loss {
        value,
        all_void: mask.codes.iter().all(|&c| c == VOID),
    })
}

/// `l0 · alpha^i`.
pub fn lr_at(epoch: usize, l0: f64, alpha: f64) -> f64 {
    l0 * libm::pow(alpha, epoch as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl Adam {
    pub fn new(params: &[Tensor], config: AdamConfig) -> Self {
        Adam {
            config,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::config("optimizer state does not match parameters"));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - libm::pow(beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(beta2, self.t as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if g.len() != p.numel() || m.len() != p.numel() {
                return Err(Error::shape("adam_step", p.shape(), &[g.len()]));
            }
            for (((x, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *x -= lr * (*m / c1) / (libm::sqrt(*v / c2) + eps);
            }
        }
        Ok(())
    }
}

/// One network input with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[3 × h × w]`
    pub rgb: Option<Tensor>,
    /// Normalized LiDAR planes `[3 × h × w]`.
    pub lidar: Option<Tensor>,
    pub mask: ClassMask,
}

fn flip_tensor(t: &Tensor) -> Tensor {
    let shape = t.shape();
    let w = shape[shape.len() - 1];
    let mut out = t.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    out
}

impl Sample {
    /// Mirrors every modality and the mask about the vertical axis.
    pub fn flipped(&self) -> Sample {
        let mut mask = self.mask.clone();
        mask.flip_horizontal();
        Sample {
            rgb: self.rgb.as_ref().map(flip_tensor),
            lidar: self.lidar.as_ref().map(flip_tensor),
            mask,
        }
    }
}

/// Inverse pixel frequency over non-void pixels, normalized to mean one and
/// clipped so no weight exceeds `MAX_WEIGHT_RATIO` times the smallest.
/// Classes without pixels take the largest allowed weight.
pub fn class_weights(masks: &[&ClassMask]) -> [f64; NUM_CLASSES] {
    let mut counts = [0u64; NUM_CLASSES];
    for m in masks {
        for &c in &m.codes {
            if (c as usize) < NUM_CLASSES {
                counts[c as usize] += 1;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return [1.0; NUM_CLASSES];
    }
    let inv = counts.map(|c| if c == 0 { f64::INFINITY } else { total as f64 / c as f64 });
    let floor = inv.iter().copied().fold(f64::INFINITY, f64::min);
    let capped = inv.map(|w| w.min(floor * MAX_WEIGHT_RATIO));
    let mean = capped.iter().sum::<f64>() / NUM_CLASSES as f64;
    capped.map(|w| w / mean)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TrainConfig {
    pub l0: f64,
    pub alpha: f64,
    pub batch: usize,
    /// Derived from the training split when absent.
    pub class_weights: Option<[f64; NUM_CLASSES]>,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Optional cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    /// Random horizontal flips of training samples.
    pub augment: bool,
    pub modality: Modality,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            l0: DEFAULT_LEARNING_RATE,
            alpha: DEFAULT_DECAY,
            batch: 32,
            class_weights: None,
            max_epochs: 100,
            patience: DEFAULT_PATIENCE,
            seed: 0,
            max_steps: None,
            augment: true,
            modality: Modality::Fusion,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l0 > 0.0 && self.l0.is_finite()) {
            return Err(Error::config("l0 must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config("alpha must lie in (0, 1]"));
        }
        if self.batch == 0 {
            return Err(Error::config("batch must be at least 1"));
        }
        if let Some(w) = self.class_weights {
            if !w.iter().all(|&v| v > 0.0 && v.is_finite()) {
                return Err(Error::config("class weights must be positive"));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_at(epoch, self.l0, self.alpha)
    }
}

/// Index split in 60/20/20 proportions after a seeded shuffle.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = (n * 3).div_ceil(5);
    let val = (n - train) / 2;
    let test = idx.split_off(train + val);
    let val_idx = idx.split_off(train);
    (idx, val_idx, test)
}

/// Forward pass on one sample; returns the logits tensor.
pub fn predict(cfg: &ModelConfig, store: &ParamStore, sample: &Sample, modality: Modality) -> Result<Tensor> {
    let mut tape = Tape::new();
    let mut binder = TapeBinder::new(&mut tape, store, false);
    let w = ClftWeights::declare(&mut binder, cfg)?;
    binder.finish()?;
    let (rgb, lidar) = active_streams(modality, sample.rgb.as_ref(), sample.lidar.as_ref())?;
    let rgb = rgb.map(|t| tape.constant(t.clone()));
    let lidar = lidar.map(|t| tape.constant(t.clone()));
    let out = clft_forward(&mut tape, &w, rgb, lidar)?;
    Ok(tape.take(out.logits))
}

/// Loss and parameter gradients (declaration order) for one sample.
pub fn loss_and_grad(
    cfg: &ModelConfig,
    store: &ParamStore,
    sample: &Sample,
    modality: Modality,
    weights: &[f64; NUM_CLASSES],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let mut binder = TapeBinder::new(&mut tape, store, true);
    let w = ClftWeights::declare(&mut binder, cfg)?;
    let vars = binder.finish()?;
    let (rgb, lidar) = active_streams(modality, sample.rgb.as_ref(), sample.lidar.as_ref())?;
    let rgb = rgb.map(|t| tape.constant(t.clone()));
    let lidar = lidar.map(|t| tape.constant(t.clone()));
    let out = clft_forward(&mut tape, &w, rgb, lidar)?;
    let loss = weighted_cross_entropy(&mut tape, out.logits, &sample.mask, weights)?;
    tape.backward(loss.value)?;
    let value = tape.data(loss.value)[0];
    let grads = vars
        .iter()
        .zip(store.tensors())
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();
    Ok((value, grads))
}

fn batch_gradients(
    cfg: &ModelConfig,
    store: &ParamStore,
    batch: &[Sample],
    modality: Modality,
    weights: &[f64; NUM_CLASSES],
) -> Result<Vec<(f64, Vec<Vec<f64>>)>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        batch
            .par_iter()
            .map(|s| loss_and_grad(cfg, store, s, modality, weights))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        batch
            .iter()
            .map(|s| loss_and_grad(cfg, store, s, modality, weights))
            .collect()
    }
}

/// Mean loss and summed confusion counts over a set of samples.
pub fn evaluate(
    cfg: &ModelConfig,
    store: &ParamStore,
    samples: &[&Sample],
    modality: Modality,
    weights: &[f64; NUM_CLASSES],
) -> Result<(f64, ConfusionState)> {
    let mut state = ConfusionState::new();
    let mut total = 0.0;
    for s in samples {
        let logits = predict(cfg, store, s, modality)?;
        let mut tape = Tape::new();
        let l = tape.constant(logits.clone());
        let loss = weighted_cross_entropy(&mut tape, l, &s.mask, weights)?;
        total += tape.data(loss.value)[0];
        state.accumulate(&argmax_mask(&logits)?, &s.mask)?;
    }
    let mean = if samples.is_empty() {
        0.0
    } else {
        total / samples.len() as f64
    };
    Ok((mean, state))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Indexed by class code.
    pub val_iou: [Option<f64>; NUM_CLASSES],
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters at the best validation loss (initial ones if no epoch ran).
    pub best: ParamStore,
    pub best_epoch: Option<usize>,
    pub log: Vec<EpochRecord>,
    pub steps: usize,
    pub weights: [f64; NUM_CLASSES],
    pub split: (Vec<usize>, Vec<usize>, Vec<usize>),
}

/// Trains with Adam under the exponential schedule, tracking validation loss
/// for early stopping. `on_epoch` sees every log record as it is produced.
pub fn fit(
    cfg: &ModelConfig,
    init: ParamStore,
    data: &[Sample],
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome> {
    tc.validate()?;
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::config("dataset is empty"));
    }
    let split = split_indices(data.len(), tc.seed);
    let train: Vec<&Sample> = split.0.iter().map(|&i| &data[i]).collect();
    let val: Vec<&Sample> = split.1.iter().map(|&i| &data[i]).collect();
    let weights = tc
        .class_weights
        .unwrap_or_else(|| class_weights(&train.iter().map(|s| &s.mask).collect::<Vec<_>>()));

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x005e_ed0f_7a17);
    let mut store = init;
    let mut adam = Adam::new(store.tensors(), AdamConfig::default());
    let mut best = store.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = None;
    let mut stale = 0;
    let mut steps = 0;
    let mut log = Vec::new();
    let step_cap = tc.max_steps.unwrap_or(usize::MAX);

    for epoch in 0..tc.max_epochs {
        if steps >= step_cap {
            break;
        }
        let lr = tc.lr_at(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0;
        for chunk in order.chunks(tc.batch) {
            if steps >= step_cap {
                break;
            }
            let batch: Vec<Sample> = chunk
                .iter()
                .map(|&i| {
                    if tc.augment && rand::Rng::gen_bool(&mut rng, 0.5) {
                        train[i].flipped()
                    } else {
                        train[i].clone()
                    }
                })
                .collect();
            let results = batch_gradients(cfg, &store, &batch, tc.modality, &weights)?;
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
            for (loss, g) in &results {
                if !loss.is_finite() {
                    return Err(Error::Divergent {
                        epoch,
                        step: steps,
                        loss: *loss,
                    });
                }
                loss_sum += loss;
                seen += 1;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.iter_mut().zip(gi).for_each(|(a, b)| *a += b * scale);
                }
            }
            adam.step(store.tensors_mut(), &grads, lr)?;
            steps += 1;
        }
        let train_loss = if seen == 0 { 0.0 } else { loss_sum / seen as f64 };
        let (val_loss, val_state) = if val.is_empty() {
            (train_loss, ConfusionState::new())
        } else {
            evaluate(cfg, &store, &val, tc.modality, &weights)?
        };
        if !val_loss.is_finite() {
            return Err(Error::Divergent {
                epoch,
                step: steps,
                loss: val_loss,
            });
        }
        let record = EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_iou: val_state.metrics().map(|m: ClassMetrics| m.iou),
            steps,
        };
        on_epoch(&record);
        log.push(record);
        if val_loss < best_loss {
            best_loss = val_loss;
            best = store.clone();
            best_epoch = Some(epoch);
            stale = 0;
        } else {
            if stale >= tc.patience {
                break;
            }
            stale += 1;
        }
    }
    Ok(FitOutcome {
        best,
        best_epoch,
        log,
        steps,
        weights,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        assert_eq!(lr_at(0, 1e-4, 0.99), 1e-4);
        assert!((lr_at(1, 1e-4, 0.99) - 9.9e-5).abs() <= 1e-15 * 9.9e-5);
        assert!((lr_at(100, 1.0, 0.99) - 0.366).abs() < 1e-3);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut p = vec![Tensor::full(&[3], 2.0)];
        let mut adam = Adam::new(&p, AdamConfig::default());
        adam.step(&mut p, &[vec![0.0; 3]], 0.1).unwrap();
        assert_eq!(p[0].data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        for scale in [1e-3, 1.0, 1e6] {
            let mut p = vec![Tensor::scalar(0.0)];
            let mut adam = Adam::new(&p, AdamConfig::default());
            adam.step(&mut p, &[vec![scale]], 0.01).unwrap();
            assert!((p[0].data()[0] + 0.01).abs() < 1e-6 * 0.01 / scale.min(1.0), "{scale}");
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut adam = Adam::new(&p, AdamConfig::default());
        for _ in 0..200 {
            let g = 2.0 * p[0].data()[0];
            adam.step(&mut p, &[vec![g]], 0.1).unwrap();
        }
        assert!(p[0].data()[0].abs() < 1e-3, "{}", p[0].data()[0]);
    }

    #[test]
    fn split_proportions() {
        let (a, b, c) = split_indices(64, 3);
        assert_eq!((a.len(), b.len(), c.len()), (39, 12, 13));
        let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..64).collect::<Vec<_>>());
        assert_eq!(split_indices(5, 0).0.len(), 3);
    }

    #[test]
    fn class_weights_are_capped() {
        let mut codes = vec![0u8; 1000];
        codes[0] = 1;
        codes[1] = 2;
        codes[2] = 2;
        let m = ClassMask::new(1000, 1, codes).unwrap();
        let w = class_weights(&[&m]);
        let min = w.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(w.iter().all(|&v| v / min <= MAX_WEIGHT_RATIO + 1e-12));
        assert!(w[1] >= w[2] && w[2] > w[0]);
    }

    #[test]
    fn rejects_bad_config() {
        for tc in [
            TrainConfig {
                l0: 0.0,
                ..Default::default()
            },
            TrainConfig {
                alpha: 1.5,
                ..Default::default()
            },
            TrainConfig {
                batch: 0,
                ..Default::default()
            },
            TrainConfig {
                class_weights: Some([1.0, 0.0, 1.0]),
                ..Default::default()
            },
        ] {
            assert!(tc.validate().is_err());
        }
    }
}
