//! Wall-clock inference timing.

use std::time::Instant;

use clft_core::config::ModelConfig;
use clft_core::evaluation::TimingStats;
use clft_core::fusion::Modality;
use clft_core::params::ParamStore;
use clft_core::training::{predict, Sample};

use crate::error::{Error, Result};

/// Runs `warmup` unrecorded forwards, then times `measured` forwards one by
/// one on the monotonic clock.
pub fn time_inference(
    cfg: &ModelConfig,
    store: &ParamStore,
    sample: &Sample,
    modality: Modality,
    warmup: usize,
    measured: usize,
) -> Result<TimingStats> {
    if warmup == 0 || measured == 0 {
        return Err(Error::Usage("warmup and measured iterations must be at least 1".into()));
    }
    for _ in 0..warmup {
        predict(cfg, store, sample, modality)?;
    }
    let mut samples = Vec::with_capacity(measured);
    for _ in 0..measured {
        let start = Instant::now();
        let out = predict(cfg, store, sample, modality)?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    Ok(TimingStats::from_samples(&samples, warmup)?)
}
