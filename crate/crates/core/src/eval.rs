//! Ground-truth checks, precision/recall sweeps and timing summaries.

use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{GtMode, Position};
use crate::matcher::MatchOutcome;

/// Default number of thresholds in an automatically derived sweep.
pub const DEFAULT_SWEEP_STEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub gt_mode: GtMode,
    /// Frames in frame mode, meters in metric mode.
    pub tolerance: f64,
    pub thresholds: Vec<f64>,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance >= 0.0) {
            return Err(Error::Config(format!(
                "tolerance must be non-negative, got {}",
                self.tolerance
            )));
        }
        if self.thresholds.is_empty() {
            return Err(Error::Config("threshold list is empty".into()));
        }
        if self.thresholds.iter().any(|t| t.is_nan()) {
            return Err(Error::Config("threshold is NaN".into()));
        }
        if self.thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("thresholds must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// `steps` evenly spaced thresholds spanning the observed qualities.
pub fn default_thresholds(outcomes: &[MatchOutcome], steps: usize) -> Vec<f64> {
    let (lo, hi) = outcomes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), o| {
            (lo.min(o.quality), hi.max(o.quality))
        });
    if !lo.is_finite() {
        return Vec::new();
    }
    if steps < 2 || hi <= lo {
        return vec![lo];
    }
    let step = (hi - lo) / (steps - 1) as f64;
    let mut v: Vec<f64> = (0..steps).map(|i| lo + step * i as f64).collect();
    v[steps - 1] = hi;
    v
}

/// Truth for every query of an evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    /// True reference ordinal per query.
    Frame { true_indices: Vec<usize> },
    /// Query positions and the positions of every reference.
    Metric {
        query_positions: Vec<Option<Position>>,
        reference_positions: Vec<Option<Position>>,
    },
}

impl GroundTruth {
    pub fn mode(&self) -> GtMode {
        match self {
            GroundTruth::Frame { .. } => GtMode::Frame,
            GroundTruth::Metric { .. } => GtMode::Metric,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            GroundTruth::Frame { true_indices } => true_indices.len(),
            GroundTruth::Metric {
                query_positions, ..
            } => query_positions.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Whether query `query_index` was matched within tolerance.
pub fn is_correct(
    outcome: &MatchOutcome,
    query_index: usize,
    truth: &GroundTruth,
    cfg: &EvalConfig,
) -> Result<bool> {
    if truth.mode() != cfg.gt_mode {
        return Err(Error::GtModeMismatch {
            config: cfg.gt_mode.as_str(),
            truth: truth.mode().as_str(),
        });
    }
    match truth {
        GroundTruth::Frame { true_indices } => {
            let t = *true_indices
                .get(query_index)
                .ok_or(Error::ReferenceOutOfRange {
                    index: query_index,
                    len: true_indices.len(),
                })?;
            Ok(outcome.best_index.abs_diff(t) as f64 <= cfg.tolerance)
        }
        GroundTruth::Metric {
            query_positions,
            reference_positions,
        } => {
            let q = query_positions
                .get(query_index)
                .copied()
                .flatten()
                .ok_or_else(|| Error::MissingPosition(outcome.query_id.clone()))?;
            let r = reference_positions
                .get(outcome.best_index)
                .ok_or(Error::ReferenceOutOfRange {
                    index: outcome.best_index,
                    len: reference_positions.len(),
                })?
                .ok_or_else(|| {
                    Error::MissingPosition(format!("reference #{}", outcome.best_index))
                })?;
            Ok((q[0] - r[0]).hypot(q[1] - r[1]) <= cfg.tolerance)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub max_f1: f64,
}

impl PrCurve {
    /// Point attaining `max_f1` (first one on ties).
    pub fn best(&self) -> Option<&PrPoint> {
        self.points.iter().find(|p| p.f1 == self.max_f1)
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Precision/recall at every configured quality threshold. A query is
/// accepted when its quality is at least the threshold; precision with no
/// accepted queries is 1.
pub fn pr_sweep(
    outcomes: &[MatchOutcome],
    truth: &GroundTruth,
    cfg: &EvalConfig,
) -> Result<PrCurve> {
    cfg.validate()?;
    if outcomes.is_empty() {
        return Err(Error::TooFew {
            what: "match outcomes",
            needed: 1,
            found: 0,
        });
    }
    if truth.len() != outcomes.len() {
        return Err(Error::LengthMismatch {
            left: outcomes.len(),
            right: truth.len(),
        });
    }
    let correct = outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| is_correct(o, i, truth, cfg))
        .collect::<Result<Vec<bool>>>()?;
    let total = outcomes.len() as f64;
    let points: Vec<PrPoint> = cfg
        .thresholds
        .iter()
        .map(|&threshold| {
            let (mut accepted, mut hits) = (0usize, 0usize);
            for (o, &ok) in outcomes.iter().zip(&correct) {
                if o.quality >= threshold {
                    accepted += 1;
                    hits += usize::from(ok);
                }
            }
            let precision = if accepted == 0 {
                1.0
            } else {
                hits as f64 / accepted as f64
            };
            let recall = hits as f64 / total;
            PrPoint {
                threshold,
                precision,
                recall,
                f1: f1_score(precision, recall),
            }
        })
        .collect();
    let max_f1 = points.iter().map(|p| p.f1).fold(0.0, f64::max);
    Ok(PrCurve { points, max_f1 })
}

/// Writes `threshold,precision,recall,f1` rows.
pub fn write_pr_curve(path: impl AsRef<Path>, curve: &PrCurve) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::document(path, e))?;
    for p in &curve.points {
        w.serialize(p).map_err(|e| Error::document(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub queries: usize,
    pub max_f1: f64,
    pub best_threshold: Option<f64>,
    pub precision_at_best: Option<f64>,
    pub recall_at_best: Option<f64>,
    pub config: EvalConfig,
}

impl EvalSummary {
    pub fn new(curve: &PrCurve, queries: usize, config: &EvalConfig) -> Self {
        let best = curve.best();
        Self {
            queries,
            max_f1: curve.max_f1,
            best_threshold: best.map(|p| p.threshold),
            precision_at_best: best.map(|p| p.precision),
            recall_at_best: best.map(|p| p.recall),
            config: config.clone(),
        }
    }
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::document(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub kept: usize,
    pub channels: usize,
    /// `kept / channels`.
    pub dimensional_reduction: f64,
    pub mean_filtered_ms: f64,
    pub mean_unfiltered_ms: f64,
    /// Filtered over unfiltered mean time.
    pub time_ratio: f64,
}

fn mean_ms(v: &[Duration]) -> f64 {
    v.iter().map(|d| d.as_secs_f64() * 1e3).sum::<f64>() / v.len() as f64
}

pub fn timing_report(
    kept: usize,
    channels: usize,
    filtered: &[Duration],
    unfiltered: &[Duration],
) -> Result<TimingReport> {
    if filtered.is_empty() || unfiltered.is_empty() {
        return Err(Error::TooFew {
            what: "timing samples",
            needed: 1,
            found: 0,
        });
    }
    if channels == 0 {
        return Err(Error::Shape("channel count is zero".into()));
    }
    let (f, u) = (mean_ms(filtered), mean_ms(unfiltered));
    Ok(TimingReport {
        kept,
        channels,
        dimensional_reduction: kept as f64 / channels as f64,
        mean_filtered_ms: f,
        mean_unfiltered_ms: u,
        time_ratio: if u > 0.0 { f / u } else { 1.0 },
    })
}
