//! Greedy feature-map filtering from calibration triplets.
//!
//! For a triplet (query `q`, true reference `r`, negative `n`) the objective
//! over a kept channel set is `D(r, n) - D(q, r)` with `D` the Euclidean
//! distance of the flattened pooled descriptors. Each iteration scores every
//! kept channel by the objective obtained without it, removes the best one,
//! and stops once the improvement over the previous objective falls below
//! the gradient cut-off. Removal lists from all triplets are then merged by
//! [`aggregate`].

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pooling::{KeptSet, PooledMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibConfig {
    pub num_calibration_images: usize,
    pub gradient_cutoff: f64,
    pub rng_seed: u64,
    /// Half-width, in frames, of the band around the true reference that
    /// negatives are never drawn from.
    pub negative_exclusion_radius: usize,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            num_calibration_images: 50,
            gradient_cutoff: 0.1,
            rng_seed: 0,
            negative_exclusion_radius: 20,
        }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_calibration_images == 0 {
            return Err(Error::Config("num_calibration_images must be at least 1".into()));
        }
        // NaN fails this comparison too
        if !(self.gradient_cutoff >= 0.0) {
            return Err(Error::Config(format!(
                "gradient_cutoff must be non-negative, got {}",
                self.gradient_cutoff
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTriplet {
    pub index: usize,
    pub query: PooledMatrix,
    pub reference: PooledMatrix,
    pub negative: PooledMatrix,
}

impl CalibrationTriplet {
    pub fn new(
        index: usize,
        query: PooledMatrix,
        reference: PooledMatrix,
        negative: PooledMatrix,
    ) -> Result<Self> {
        if !query.same_shape(&reference) || !query.same_shape(&negative) {
            return Err(Error::Shape(format!(
                "triplet {index}: query {}x{}, reference {}x{}, negative {}x{}",
                query.channels(),
                query.per_map_dim(),
                reference.channels(),
                reference.per_map_dim(),
                negative.channels(),
                negative.per_map_dim()
            )));
        }
        Ok(Self {
            index,
            query,
            reference,
            negative,
        })
    }

    pub fn channels(&self) -> usize {
        self.query.channels()
    }
}

fn channel_sq_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

/// Euclidean distance between the kept rows of `a` and `b`.
pub fn l2_distance(a: &PooledMatrix, b: &PooledMatrix, kept: &KeptSet) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape("l2_distance operands differ in shape".into()));
    }
    kept.check(a.channels())?;
    let sum: f64 = kept
        .indices()
        .iter()
        .map(|&c| channel_sq_diff(a.row(c), b.row(c)))
        .sum();
    Ok(sum.sqrt())
}

/// Cached per-channel squared contributions for one triplet, so removing a
/// channel or scoring a candidate removal costs O(1) instead of a full
/// distance recomputation.
#[derive(Debug, Clone)]
pub struct TripletState {
    qr: Vec<f64>,
    rn: Vec<f64>,
    kept: Vec<usize>,
    total_qr: f64,
    total_rn: f64,
}

impl TripletState {
    pub fn new(t: &CalibrationTriplet, kept: &KeptSet) -> Result<Self> {
        kept.check(t.channels())?;
        let qr: Vec<f64> = (0..t.channels())
            .map(|c| channel_sq_diff(t.query.row(c), t.reference.row(c)))
            .collect();
        let rn: Vec<f64> = (0..t.channels())
            .map(|c| channel_sq_diff(t.reference.row(c), t.negative.row(c)))
            .collect();
        let kept = kept.indices().to_vec();
        let total_qr = kept.iter().map(|&c| qr[c]).sum();
        let total_rn = kept.iter().map(|&c| rn[c]).sum();
        Ok(Self {
            qr,
            rn,
            kept,
            total_qr,
            total_rn,
        })
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    /// `(D(q, r), D(r, n))` over the current kept set.
    pub fn distances(&self) -> (f64, f64) {
        (self.total_qr.max(0.0).sqrt(), self.total_rn.max(0.0).sqrt())
    }

    pub fn objective(&self) -> f64 {
        let (qr, rn) = self.distances();
        rn - qr
    }

    /// `(D(q, r), D(r, n))` with channel `j` additionally removed.
    pub fn distances_without(&self, j: usize) -> (f64, f64) {
        (
            (self.total_qr - self.qr[j]).max(0.0).sqrt(),
            (self.total_rn - self.rn[j]).max(0.0).sqrt(),
        )
    }

    /// Objective after removing each kept channel, in kept order.
    pub fn scores(&self) -> Vec<f64> {
        self.kept
            .iter()
            .map(|&j| {
                let (qr, rn) = self.distances_without(j);
                rn - qr
            })
            .collect()
    }

    /// Highest-scoring removal; ties go to the lowest channel index.
    pub fn best_removal(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (&j, s) in self.kept.iter().zip(self.scores()) {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((j, s));
            }
        }
        best
    }

    pub fn remove(&mut self, j: usize) {
        if let Ok(pos) = self.kept.binary_search(&j) {
            self.kept.remove(pos);
            self.total_qr -= self.qr[j];
            self.total_rn -= self.rn[j];
        }
    }
}

/// `D(j)` for every `j` in `kept`: the objective with channel `j` removed.
pub fn removal_scores(t: &CalibrationTriplet, kept: &KeptSet) -> Result<Vec<f64>> {
    if kept.len() < 2 {
        return Err(Error::TooFew {
            what: "kept channels to score a removal",
            needed: 2,
            found: kept.len(),
        });
    }
    Ok(TripletState::new(t, kept)?.scores())
}

/// Outcome of the greedy loop on one triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyTrace {
    /// Removed channels in removal order.
    pub removed: Vec<usize>,
    /// Objective before any removal followed by the objective after each
    /// accepted removal.
    pub objective: Vec<f64>,
    /// Whether `D(q, r) < D(r, n)` held on the final kept set.
    pub separated: bool,
}

/// Runs the greedy removal loop over all channels of `t`.
pub fn greedy_filter(t: &CalibrationTriplet, cfg: &CalibConfig) -> Result<GreedyTrace> {
    if t.channels() < 2 {
        return Err(Error::TooFew {
            what: "channels for greedy filtering",
            needed: 2,
            found: t.channels(),
        });
    }
    greedy_filter_from(t, &KeptSet::all(t.channels())?, cfg.gradient_cutoff)
}

/// Greedy loop starting from an arbitrary kept set.
pub fn greedy_filter_from(
    t: &CalibrationTriplet,
    kept: &KeptSet,
    gradient_cutoff: f64,
) -> Result<GreedyTrace> {
    let mut state = TripletState::new(t, kept)?;
    let mut previous = state.objective();
    let mut trace = GreedyTrace {
        removed: Vec::new(),
        objective: vec![previous],
        separated: false,
    };
    while state.kept().len() > 1 {
        let (worst, maxval) = state.best_removal().expect("kept set has at least two channels");
        // negated so a NaN improvement also stops
        if !(maxval - previous >= gradient_cutoff) {
            break;
        }
        state.remove(worst);
        trace.removed.push(worst);
        trace.objective.push(maxval);
        previous = maxval;
    }
    let (qr, rn) = state.distances();
    trace.separated = qr < rn;
    Ok(trace)
}

/// Merged filtering decision over all calibration triplets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    pub per_image_removed: Vec<Vec<usize>>,
    pub removal_counts: Vec<usize>,
    pub kept_set: KeptSet,
    pub kept_count: usize,
}

/// Sums removal counts and keeps the `K` least-removed channels, where `K`
/// is the largest number of channels any single triplet kept. Count ties go
/// to the lower channel index.
pub fn aggregate(per_image_removed: &[Vec<usize>], channels: usize) -> Result<FilterResult> {
    if per_image_removed.is_empty() {
        return Err(Error::TooFew {
            what: "removal lists",
            needed: 1,
            found: 0,
        });
    }
    let mut removal_counts = vec![0usize; channels];
    let mut seen = vec![usize::MAX; channels];
    for (i, removed) in per_image_removed.iter().enumerate() {
        for &c in removed {
            if c >= channels {
                return Err(Error::ChannelOutOfRange { index: c, channels });
            }
            if seen[c] == i {
                return Err(Error::Config(format!(
                    "removal list {i} contains channel {c} twice"
                )));
            }
            seen[c] = i;
            removal_counts[c] += 1;
        }
    }
    let kept_count = per_image_removed
        .iter()
        .map(|r| channels - r.len())
        .max()
        .unwrap_or(0);
    let mut order: Vec<usize> = (0..channels).collect();
    order.sort_by_key(|&c| (removal_counts[c], c));
    let kept_set = KeptSet::new(order.into_iter().take(kept_count))?;
    Ok(FilterResult {
        per_image_removed: per_image_removed.to_vec(),
        removal_counts,
        kept_set,
        kept_count,
    })
}

/// Pairs the first `num_calibration_images` queries with their true
/// references and a seeded random negative outside the exclusion band.
pub fn build_triplets(
    query_pooled: &[PooledMatrix],
    ref_pooled: &[PooledMatrix],
    correspondences: &[usize],
    cfg: &CalibConfig,
) -> Result<Vec<CalibrationTriplet>> {
    cfg.validate()?;
    let n = cfg.num_calibration_images;
    if query_pooled.len() < n {
        return Err(Error::TooFew {
            what: "calibration images",
            needed: n,
            found: query_pooled.len(),
        });
    }
    if correspondences.len() < n {
        return Err(Error::TooFew {
            what: "correspondences",
            needed: n,
            found: correspondences.len(),
        });
    }
    let len = ref_pooled.len();
    let radius = cfg.negative_exclusion_radius;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut triplets = Vec::with_capacity(n);
    for (i, (query, &truth)) in query_pooled.iter().zip(correspondences).take(n).enumerate() {
        if truth >= len {
            return Err(Error::ReferenceOutOfRange { index: truth, len });
        }
        let below = truth.saturating_sub(radius);
        let above_start = truth.saturating_add(radius).saturating_add(1);
        let above = len.saturating_sub(above_start);
        if below + above == 0 {
            return Err(Error::NoNegativeCandidates {
                index: truth,
                radius,
                len,
            });
        }
        let draw = rng.random_range(0..below + above);
        let negative = if draw < below {
            draw
        } else {
            above_start + (draw - below)
        };
        triplets.push(CalibrationTriplet::new(
            i,
            query.clone(),
            ref_pooled[truth].clone(),
            ref_pooled[negative].clone(),
        )?);
    }
    Ok(triplets)
}

/// Greedy filtering on every triplet (in parallel) followed by aggregation.
pub fn calibrate(
    triplets: &[CalibrationTriplet],
    cfg: &CalibConfig,
) -> Result<(FilterResult, Vec<GreedyTrace>)> {
    cfg.validate()?;
    let Some(first) = triplets.first() else {
        return Err(Error::TooFew {
            what: "calibration triplets",
            needed: 1,
            found: 0,
        });
    };
    let channels = first.channels();
    if let Some(t) = triplets.iter().find(|t| !t.query.same_shape(&first.query)) {
        return Err(Error::Shape(format!(
            "triplet {} has {} channels, expected {channels}",
            t.index,
            t.channels()
        )));
    }
    let traces = triplets
        .par_iter()
        .map(|t| greedy_filter(t, cfg))
        .collect::<Result<Vec<_>>>()?;
    let removed: Vec<Vec<usize>> = traces.iter().map(|t| t.removed.clone()).collect();
    Ok((aggregate(&removed, channels)?, traces))
}

/// Serialized form of a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDocument {
    pub layer_name: String,
    pub channels: usize,
    pub kept_count: usize,
    pub kept_set: KeptSet,
    pub removal_counts: Vec<usize>,
    pub per_image_removed: Vec<Vec<usize>>,
    pub per_image_separated: Vec<bool>,
    pub config: CalibConfig,
}

impl FilterDocument {
    pub fn new(
        layer_name: impl Into<String>,
        result: &FilterResult,
        traces: &[GreedyTrace],
        config: &CalibConfig,
    ) -> Self {
        Self {
            layer_name: layer_name.into(),
            channels: result.removal_counts.len(),
            kept_count: result.kept_count,
            kept_set: result.kept_set.clone(),
            removal_counts: result.removal_counts.clone(),
            per_image_removed: result.per_image_removed.clone(),
            per_image_separated: traces.iter().map(|t| t.separated).collect(),
            config: config.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::document(path, e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: Self = serde_json::from_str(&text).map_err(|e| Error::document(path, e))?;
        doc.kept_set.check(doc.channels)?;
        if doc.kept_set.len() != doc.kept_count {
            return Err(Error::document(path, "kept_count disagrees with kept_set"));
        }
        Ok(doc)
    }
}
