//! Void-aware segmentation metrics, weather-stratified reports and timing
//! statistics.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::config::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::fusion::Modality;
use crate::geometry::{ClassMask, HUMAN, VEHICLE};
use crate::graph::VOID;

/// Per-class pixel counts. Background is tracked but not reported.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConfusionState {
    pub tp: [u64; NUM_CLASSES],
    pub fp: [u64; NUM_CLASSES],
    #[cfg_attr(feature = "serde", serde(rename = "fn"))]
    pub fn_: [u64; NUM_CLASSES],
    pub void_excluded: u64,
}

impl ConfusionState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one frame. Pixels whose ground truth is void are skipped.
    pub fn accumulate(&mut self, pred: &ClassMask, gt: &ClassMask) -> Result<()> {
        if (pred.width, pred.height) != (gt.width, gt.height) {
            return Err(Error::shape(
                "accumulate",
                &[pred.height, pred.width],
                &[gt.height, gt.width],
            ));
        }
        for (&p, &g) in pred.codes.iter().zip(&gt.codes) {
            if g == VOID {
                self.void_excluded += 1;
                continue;
            }
            if p as usize >= NUM_CLASSES {
                return Err(Error::config(format!("prediction holds non-class code {p}")));
            }
            if p == g {
                self.tp[p as usize] += 1;
            } else {
                self.fp[p as usize] += 1;
                self.fn_[g as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&self, other: &ConfusionState) -> ConfusionState {
        let add = |a: [u64; NUM_CLASSES], b: [u64; NUM_CLASSES]| core::array::from_fn(|i| a[i] + b[i]);
        ConfusionState {
            tp: add(self.tp, other.tp),
            fp: add(self.fp, other.fp),
            fn_: add(self.fn_, other.fn_),
            void_excluded: self.void_excluded + other.void_excluded,
        }
    }

    pub fn class_metrics(&self, class: usize) -> ClassMetrics {
        let (tp, fp, fn_) = (self.tp[class], self.fp[class], self.fn_[class]);
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        ClassMetrics {
            iou: ratio(tp, tp + fp + fn_),
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
        }
    }

    /// Metrics for every class, indexed by class code.
    pub fn metrics(&self) -> [ClassMetrics; NUM_CLASSES] {
        core::array::from_fn(|c| self.class_metrics(c))
    }
}

/// `None` marks an empty denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassMetrics {
    pub iou: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

/// Mean over defined values; `None` when none is defined.
pub fn defined_mean(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SubsetTag {
    LightDry,
    LightWet,
    DarkDry,
    DarkWet,
}

impl SubsetTag {
    pub const ALL: [SubsetTag; 4] = [
        SubsetTag::LightDry,
        SubsetTag::LightWet,
        SubsetTag::DarkDry,
        SubsetTag::DarkWet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SubsetTag::LightDry => "light-dry",
            SubsetTag::LightWet => "light-wet",
            SubsetTag::DarkDry => "dark-dry",
            SubsetTag::DarkWet => "dark-wet",
        }
    }

    pub fn is_dark(self) -> bool {
        matches!(self, SubsetTag::DarkDry | SubsetTag::DarkWet)
    }

    pub fn is_wet(self) -> bool {
        matches!(self, SubsetTag::LightWet | SubsetTag::DarkWet)
    }
}

impl core::str::FromStr for SubsetTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SubsetTag::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::config(format!("unknown subset tag {s}")))
    }
}

/// Reported classes with their display names.
pub const REPORTED_CLASSES: [(u8, &str); 2] = [(VEHICLE, "vehicle"), (HUMAN, "human")];

pub const ALL_WEATHER: &str = "all-weather";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub subset: String,
    pub counts: ConfusionState,
    /// Same order as [`REPORTED_CLASSES`].
    pub classes: [ClassMetrics; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub modality: Modality,
    /// Present subsets in tag order, then the all-weather row.
    pub rows: Vec<ReportRow>,
}

fn row(subset: &str, counts: ConfusionState) -> ReportRow {
    ReportRow {
        subset: subset.into(),
        counts,
        classes: REPORTED_CLASSES.map(|(c, _)| counts.class_metrics(c as usize)),
    }
}

/// Per-subset rows plus an all-weather row aggregated from raw counts.
pub fn stratified_report(modality: Modality, results: &BTreeMap<SubsetTag, ConfusionState>) -> Result<Report> {
    if results.is_empty() {
        return Err(Error::config("stratified report needs at least one subset"));
    }
    let mut rows: Vec<ReportRow> = results.iter().map(|(tag, s)| row(tag.name(), *s)).collect();
    let total = results.values().fold(ConfusionState::new(), |acc, s| acc.merge(s));
    rows.push(row(ALL_WEATHER, total));
    Ok(Report { modality, rows })
}

fn percent(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.2}", 100.0 * v),
        None => "undefined".into(),
    }
}

impl Report {
    /// Aligned text table, values in percent.
    pub fn to_text(&self) -> String {
        let mut header: Vec<String> = alloc::vec!["subset".into()];
        for (_, name) in REPORTED_CLASSES {
            for m in ["iou", "precision", "recall"] {
                header.push(format!("{name} {m}"));
            }
        }
        let mut table = alloc::vec![header];
        for r in &self.rows {
            let mut cells = alloc::vec![r.subset.clone()];
            for m in &r.classes {
                cells.extend([percent(m.iou), percent(m.precision), percent(m.recall)]);
            }
            table.push(cells);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = format!("modality {}\n", self.modality.label());
        for r in &table {
            let mut line = String::new();
            for (c, cell) in r.iter().enumerate() {
                if c == 0 {
                    let _ = write!(line, "{cell:<w$}", w = widths[c]);
                } else {
                    let _ = write!(line, "  {cell:>w$}", w = widths[c]);
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TimingStats {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub warmup: usize,
    pub measured: usize,
}

impl TimingStats {
    /// Mean and population standard deviation of the measured samples.
    pub fn from_samples(samples_ms: &[f64], warmup: usize) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(Error::config("at least one measured iteration is required"));
        }
        let n = samples_ms.len() as f64;
        let mean = samples_ms.iter().sum::<f64>() / n;
        let var = samples_ms.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        Ok(TimingStats {
            mean_ms: mean,
            std_ms: libm::sqrt(var),
            warmup,
            measured: samples_ms.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(codes: &[u8]) -> ClassMask {
        ClassMask::new(codes.len(), 1, codes.to_vec()).unwrap()
    }

    #[test]
    fn formula_example() {
        let s = ConfusionState {
            tp: [0, 3, 0],
            fp: [0, 1, 0],
            fn_: [0, 2, 0],
            void_excluded: 0,
        };
        let m = s.class_metrics(1);
        assert_eq!(m.iou, Some(0.5));
        assert_eq!(m.precision, Some(0.75));
        assert_eq!(m.recall, Some(0.6));
        assert_eq!(s.class_metrics(2).iou, None);
    }

    #[test]
    fn void_only_frame_changes_nothing_but_the_void_count() {
        let mut s = ConfusionState::new();
        s.accumulate(&mask(&[1, 2, 0]), &mask(&[1, 1, 0])).unwrap();
        let before = s.metrics();
        s.accumulate(&mask(&[1, 2, 0]), &mask(&[VOID; 3])).unwrap();
        assert_eq!(s.metrics(), before);
        assert_eq!(s.void_excluded, 3);
    }

    #[test]
    fn predictions_must_be_classes() {
        let mut s = ConfusionState::new();
        assert!(s.accumulate(&mask(&[VOID]), &mask(&[1])).is_err());
        assert!(s.accumulate(&mask(&[1, 1]), &mask(&[1])).is_err());
    }

    #[test]
    fn single_subset_report_repeats_as_all_weather() {
        let mut s = ConfusionState::new();
        s.accumulate(&mask(&[1, 1, 2, 0]), &mask(&[1, 0, 2, 2])).unwrap();
        let r = stratified_report(Modality::Fusion, &BTreeMap::from([(SubsetTag::DarkWet, s)])).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.rows[0].classes, r.rows[1].classes);
        assert_eq!(r.rows[1].subset, ALL_WEATHER);
        assert!(stratified_report(Modality::Fusion, &BTreeMap::new()).is_err());
    }

    #[test]
    fn text_cells_are_percentages() {
        let s = ConfusionState {
            tp: [0, 9135, 6604],
            fp: [0, 865, 3396],
            fn_: [0, 0, 0],
            void_excluded: 0,
        };
        let r = stratified_report(Modality::Fusion, &BTreeMap::from([(SubsetTag::LightDry, s)])).unwrap();
        let text = r.to_text();
        let line = text.lines().find(|l| l.starts_with("light-dry")).unwrap();
        let cells: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(cells[1], "91.35");
        assert_eq!(cells[4], "66.04");
    }

    #[test]
    fn timing_single_sample_has_zero_std() {
        let t = TimingStats::from_samples(&[3.5], 2).unwrap();
        assert_eq!((t.mean_ms, t.std_ms, t.warmup, t.measured), (3.5, 0.0, 2, 1));
        let t = TimingStats::from_samples(&[1.0, 2.0, 3.0], 0).unwrap();
        assert!(t.mean_ms >= 1.0 && t.mean_ms <= 3.0);
    }
}
