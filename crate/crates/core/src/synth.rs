//! Synthetic traverses with planted condition-invariant channels, and naive
//! oracles for the greedy filter.
//!
//! Every place owns a random spatial pattern on the signal channels that is
//! shared by both conditions (up to a small jitter). Noise channels are a
//! per-condition pattern plus fresh per-image noise, so they agree within a
//! condition but carry nothing about place identity across conditions. The
//! query condition also offsets every noise channel by `appearance_shift`.
//!
//! The reference traverse visits every place in order. The query condition
//! is split into a calibration traverse (places `0..num_calibration`) and an
//! evaluation traverse (the following `num_queries` places).

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::calib::CalibrationTriplet;
use crate::error::{Error, Result};
use crate::manifest::{save_correspondences, save_manifest, DatasetManifest, GtMode, ManifestEntry};
use crate::pooling::{flatten, KeptSet};
use crate::tensor::{write_tensor, FeatureTensor};

/// Spacing between consecutive places along the synthetic route, meters.
pub const PLACE_SPACING_M: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthParams {
    pub num_places: usize,
    pub num_calibration: usize,
    pub num_queries: usize,
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub signal_channels: Vec<usize>,
    pub noise_channels: Vec<usize>,
    /// Scale of the noise channels (condition pattern plus per-image noise).
    pub condition_noise_scale: f64,
    /// Offset added to noise channels in the query condition.
    pub appearance_shift: f64,
    /// Std-dev of the per-image perturbation of signal channels.
    pub signal_jitter: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self::with_random_signal(300, 64, 16, 42)
    }
}

impl SynthParams {
    /// Pinned defaults with `num_signal` signal channels drawn uniformly
    /// (seeded) from `0..channels`.
    pub fn with_random_signal(num_places: usize, channels: usize, num_signal: usize, seed: u64) -> Self {
        use rand::seq::index::sample;
        let mut rng = stream_rng(seed, Stream::SignalChoice, 0);
        let mut signal: Vec<usize> = sample(&mut rng, channels, num_signal.min(channels)).into_vec();
        signal.sort_unstable();
        let noise = (0..channels).filter(|c| signal.binary_search(c).is_err()).collect();
        Self {
            num_places,
            num_calibration: 50.min(num_places),
            num_queries: 100.min(num_places.saturating_sub(50)),
            channels,
            width: 6,
            height: 6,
            signal_channels: signal,
            noise_channels: noise,
            condition_noise_scale: 0.7,
            appearance_shift: 1.5,
            signal_jitter: 0.25,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::Config("channels and spatial dims must be positive".into()));
        }
        let mut seen = vec![false; self.channels];
        for &c in self.signal_channels.iter().chain(&self.noise_channels) {
            if c >= self.channels {
                return Err(Error::ChannelOutOfRange {
                    index: c,
                    channels: self.channels,
                });
            }
            if std::mem::replace(&mut seen[c], true) {
                return Err(Error::Config(format!(
                    "channel {c} is listed twice across signal/noise sets"
                )));
            }
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("channel {c} is neither signal nor noise")));
        }
        if self.num_calibration + self.num_queries > self.num_places {
            return Err(Error::Config(format!(
                "{} calibration + {} query places exceed {} places",
                self.num_calibration, self.num_queries, self.num_places
            )));
        }
        for (name, v) in [
            ("condition_noise_scale", self.condition_noise_scale),
            ("signal_jitter", self.signal_jitter),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        if !self.appearance_shift.is_finite() {
            return Err(Error::Config("appearance_shift must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Stream {
    SignalChoice = 1,
    PlacePattern = 2,
    ConditionPattern = 3,
    ReferenceImage = 4,
    QueryImage = 5,
}

/// Independent generator per (stream, index), so images can be produced in
/// any order without changing their content.
fn stream_rng(seed: u64, stream: Stream, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 40) | index as u64);
    rng
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub params: SynthParams,
    pub reference: Vec<FeatureTensor>,
    pub calibration: Vec<FeatureTensor>,
    pub queries: Vec<FeatureTensor>,
    /// True reference index of each calibration image.
    pub calibration_truth: Vec<usize>,
    /// True reference index of each evaluation query.
    pub query_truth: Vec<usize>,
}

#[derive(Clone, Copy)]
enum Condition {
    Reference,
    Query,
}

struct Generator<'a> {
    p: &'a SynthParams,
    cells: usize,
    /// `[condition][channel][cell]`, only noise channels populated.
    condition_patterns: [Vec<Vec<f64>>; 2],
}

impl<'a> Generator<'a> {
    fn new(p: &'a SynthParams) -> Self {
        let cells = p.width * p.height;
        let pattern = |cond: usize| {
            let mut rng = stream_rng(p.seed, Stream::ConditionPattern, cond);
            (0..p.channels).map(|_| normals(&mut rng, cells)).collect()
        };
        Self {
            p,
            cells,
            condition_patterns: [pattern(0), pattern(1)],
        }
    }

    fn image(&self, place: usize, cond: Condition) -> Result<FeatureTensor> {
        let p = self.p;
        let (c, cells) = (p.channels, self.cells);
        let (mut img_rng, cond_idx, shift) = match cond {
            Condition::Reference => (stream_rng(p.seed, Stream::ReferenceImage, place), 0, 0.0),
            Condition::Query => (stream_rng(p.seed, Stream::QueryImage, place), 1, p.appearance_shift),
        };
        let mut data = vec![0f32; cells * c];
        for &ch in &p.signal_channels {
            // one stream per (place, channel): patterns do not depend on
            // which other channels are signal
            let mut ch_rng = stream_rng(p.seed, Stream::PlacePattern, place * c + ch);
            let base = normals(&mut ch_rng, cells);
            let jitter = normals(&mut img_rng, cells);
            for (cell, (b, j)) in base.iter().zip(&jitter).enumerate() {
                data[cell * c + ch] = (b + p.signal_jitter * j) as f32;
            }
        }
        for &ch in &p.noise_channels {
            let pattern = &self.condition_patterns[cond_idx][ch];
            let noise = normals(&mut img_rng, cells);
            for (cell, (b, n)) in pattern.iter().zip(&noise).enumerate() {
                data[cell * c + ch] = (p.condition_noise_scale * (b + n) + shift) as f32;
            }
        }
        FeatureTensor::new(p.width, p.height, c, data)
    }
}

/// Generates a dataset; identical params give bit-identical tensors.
pub fn generate(params: &SynthParams) -> Result<SynthDataset> {
    params.validate()?;
    let g = Generator::new(params);
    let reference = (0..params.num_places)
        .map(|place| g.image(place, Condition::Reference))
        .collect::<Result<Vec<_>>>()?;
    let calibration_truth: Vec<usize> = (0..params.num_calibration).collect();
    let query_truth: Vec<usize> =
        (params.num_calibration..params.num_calibration + params.num_queries).collect();
    let calibration = calibration_truth
        .iter()
        .map(|&place| g.image(place, Condition::Query))
        .collect::<Result<Vec<_>>>()?;
    let queries = query_truth
        .iter()
        .map(|&place| g.image(place, Condition::Query))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthDataset {
        params: params.clone(),
        reference,
        calibration,
        queries,
        calibration_truth,
        query_truth,
    })
}

fn write_traverse(
    dir: &Path,
    prefix: &str,
    tensors: &[FeatureTensor],
    places: &[usize],
    truth: Option<&[usize]>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(tensors.len());
    for (t, &place) in tensors.iter().zip(places) {
        let id = format!("{prefix}{place:06}");
        let file = format!("{id}.fmap");
        write_tensor(t, dir.join(&file))?;
        entries.push(ManifestEntry {
            id,
            tensor_path: file,
            position: Some([place as f64 * PLACE_SPACING_M, 0.0]),
        });
    }
    if let Some(truth) = truth {
        save_correspondences(
            dir.join("correspondences.csv"),
            entries.iter().map(|e| e.id.clone()).zip(truth.iter().copied()),
        )?;
    }
    let manifest = DatasetManifest::new("synthetic", GtMode::Frame, entries)?;
    save_manifest(&manifest, dir.join("manifest.json"))
}

impl SynthDataset {
    /// Writes `reference/`, `calibration/` and `query/` traverses, each with
    /// a `manifest.json`, plus `correspondences.csv` for the query-condition
    /// traverses and a `params.json` echo.
    pub fn write_to(&self, root: impl AsRef<Path>) -> Result<()> {
        let root = root.as_ref();
        let ref_places: Vec<usize> = (0..self.reference.len()).collect();
        write_traverse(&root.join("reference"), "ref", &self.reference, &ref_places, None)?;
        write_traverse(
            &root.join("calibration"),
            "cal",
            &self.calibration,
            &self.calibration_truth,
            Some(&self.calibration_truth),
        )?;
        write_traverse(
            &root.join("query"),
            "qry",
            &self.queries,
            &self.query_truth,
            Some(&self.query_truth),
        )?;
        crate::eval::write_json(root.join("params.json"), &self.params)
    }
}

fn euclid(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn objective_naive(t: &CalibrationTriplet, kept: &KeptSet) -> Result<f64> {
    let q = flatten(&t.query, kept)?;
    let r = flatten(&t.reference, kept)?;
    let n = flatten(&t.negative, kept)?;
    Ok(euclid(&r, &n) - euclid(&q, &r))
}

/// Exhaustive best single removal: rebuilds the three flattened vectors for
/// every candidate. Ties go to the lowest channel index.
pub fn brute_force_best_removal(t: &CalibrationTriplet, kept: &KeptSet) -> Result<(usize, f64)> {
    if kept.len() < 2 {
        return Err(Error::TooFew {
            what: "kept channels to score a removal",
            needed: 2,
            found: kept.len(),
        });
    }
    let mut best: Option<(usize, f64)> = None;
    for &j in kept.indices() {
        let rest = KeptSet::new(kept.indices().iter().copied().filter(|&c| c != j))?;
        let score = objective_naive(t, &rest)?;
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((j, score));
        }
    }
    Ok(best.expect("at least two candidates"))
}

/// Greedy removal order computed with [`brute_force_best_removal`] and the
/// same stop rule as the production filter.
pub fn brute_force_trace(t: &CalibrationTriplet, gradient_cutoff: f64) -> Result<Vec<usize>> {
    let mut kept = KeptSet::all(t.channels())?;
    let mut previous = objective_naive(t, &kept)?;
    let mut removed = Vec::new();
    while kept.len() > 1 {
        let (worst, maxval) = brute_force_best_removal(t, &kept)?;
        if !(maxval - previous >= gradient_cutoff) {
            break;
        }
        removed.push(worst);
        kept = KeptSet::new(kept.indices().iter().copied().filter(|&c| c != worst))?;
        previous = maxval;
    }
    Ok(removed)
}
