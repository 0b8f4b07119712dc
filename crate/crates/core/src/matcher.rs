//! Single-frame place recognition against a reference template database.
//!
//! Each query is compared to every template by cosine distance, the distances
//! are mapped affinely onto `[0.001, 0.999]` (best match highest), and the
//! confidence of the best match is the ratio of its score to the best score
//! outside a window of neighbouring templates.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pooling::{flatten, KeptSet, PooledMatrix};

pub const SCORE_MIN: f64 = 0.001;
pub const SCORE_MAX: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatcherConfig {
    /// Half-width of the window around the best match excluded when looking
    /// for the runner-up score.
    pub exclusion_window: usize,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            exclusion_window: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub query_id: String,
    pub best_index: usize,
    pub quality: f64,
    pub best_distance: f64,
    /// Empty when the outcome was read back from a match table.
    #[serde(skip)]
    pub normalized_scores: Vec<f64>,
}

/// `1 - cos(a, b)`. A zero vector is at distance 1 from everything.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    Ok(cosine_from_parts(dot, na.sqrt(), nb.sqrt()))
}

#[inline]
fn cosine_from_parts(dot: f64, norm_a: f64, norm_b: f64) -> f64 {
    if norm_a == 0.0 || norm_b == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (norm_a * norm_b)).clamp(0.0, 2.0)
}

/// Maps distances onto `[0.001, 0.999]` with the smallest distance scoring
/// highest. Constant input maps to 0.5 everywhere.
pub fn normalize_scores(distances: &[f64]) -> Result<Vec<f64>> {
    if distances.len() < 2 {
        return Err(Error::TooFew {
            what: "distances to normalize",
            needed: 2,
            found: distances.len(),
        });
    }
    let (min, max) = min_max(distances);
    if max == min {
        return Ok(vec![0.5; distances.len()]);
    }
    let span = max - min;
    Ok(distances
        .iter()
        .map(|&d| {
            if d == min {
                SCORE_MAX
            } else if d == max {
                SCORE_MIN
            } else {
                SCORE_MIN + (SCORE_MAX - SCORE_MIN) * (max - d) / span
            }
        })
        .collect())
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)))
}

/// Ratio of the best score to the highest score outside
/// `[best - window, best + window]`; 1 when nothing lies outside.
pub fn quality_ratio(scores: &[f64], best: usize, window: usize) -> f64 {
    let lo = best.saturating_sub(window);
    let hi = best.saturating_add(window);
    let runner_up = scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| i < lo || i > hi)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if runner_up == f64::NEG_INFINITY {
        1.0
    } else {
        scores[best] / runner_up
    }
}

/// Reference descriptors flattened once for a fixed kept set.
#[derive(Debug, Clone)]
pub struct TemplateDb {
    kept: KeptSet,
    channels: usize,
    per_map_dim: usize,
    dim: usize,
    rows: Vec<f32>,
    norms: Vec<f64>,
}

impl TemplateDb {
    pub fn new(refs: &[PooledMatrix], kept: &KeptSet) -> Result<Self> {
        if refs.len() < 2 {
            return Err(Error::TooFew {
                what: "references",
                needed: 2,
                found: refs.len(),
            });
        }
        let first = &refs[0];
        kept.check(first.channels())?;
        let dim = kept.len() * first.per_map_dim();
        let mut rows = Vec::with_capacity(dim * refs.len());
        for (i, r) in refs.iter().enumerate() {
            if !r.same_shape(first) {
                return Err(Error::Shape(format!(
                    "reference {i} is {}x{}, expected {}x{}",
                    r.channels(),
                    r.per_map_dim(),
                    first.channels(),
                    first.per_map_dim()
                )));
            }
            rows.extend(flatten(r, kept)?);
        }
        let norms = rows
            .chunks_exact(dim)
            .map(|r| r.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt())
            .collect();
        Ok(Self {
            kept: kept.clone(),
            channels: first.channels(),
            per_map_dim: first.per_map_dim(),
            dim,
            rows,
            norms,
        })
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn kept(&self) -> &KeptSet {
        &self.kept
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Cosine distance from `query` (already flattened) to every template.
    pub fn distances(&self, query: &[f32]) -> Result<Vec<f64>> {
        if query.len() != self.dim {
            return Err(Error::LengthMismatch {
                left: query.len(),
                right: self.dim,
            });
        }
        let qn = query.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        Ok(self
            .rows
            .chunks_exact(self.dim)
            .zip(&self.norms)
            .map(|(row, &rn)| {
                let dot: f64 = row
                    .iter()
                    .zip(query)
                    .map(|(&a, &b)| f64::from(a) * f64::from(b))
                    .sum();
                cosine_from_parts(dot, qn, rn)
            })
            .collect())
    }

    pub fn match_flat(&self, query_id: &str, query: &[f32], cfg: &MatcherConfig) -> Result<MatchOutcome> {
        let distances = self.distances(query)?;
        let normalized_scores = normalize_scores(&distances)?;
        // first minimum wins ties
        let (best_index, best_distance) = distances
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, d)| if d < acc.1 { (i, d) } else { acc });
        let (min, max) = min_max(&distances);
        let quality = if max == min {
            1.0
        } else {
            quality_ratio(&normalized_scores, best_index, cfg.exclusion_window)
        };
        Ok(MatchOutcome {
            query_id: query_id.to_string(),
            best_index,
            quality,
            best_distance,
            normalized_scores,
        })
    }

    pub fn match_pooled(&self, query_id: &str, query: &PooledMatrix, cfg: &MatcherConfig) -> Result<MatchOutcome> {
        if query.channels() != self.channels || query.per_map_dim() != self.per_map_dim {
            return Err(Error::Shape(format!(
                "query {query_id} is {}x{}, templates are {}x{}",
                query.channels(),
                query.per_map_dim(),
                self.channels,
                self.per_map_dim
            )));
        }
        self.match_flat(query_id, &flatten(query, &self.kept)?, cfg)
    }
}

/// Matches one query against `refs` using only the `kept` channels.
pub fn match_query(
    query_id: &str,
    query: &PooledMatrix,
    refs: &[PooledMatrix],
    kept: &KeptSet,
    cfg: &MatcherConfig,
) -> Result<MatchOutcome> {
    TemplateDb::new(refs, kept)?.match_pooled(query_id, query, cfg)
}

/// Writes `query_id,best_index,quality,best_distance` rows.
pub fn write_match_table(path: impl AsRef<Path>, outcomes: &[MatchOutcome]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::document(path, e))?;
    for o in outcomes {
        w.serialize(o).map_err(|e| Error::document(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_match_table(path: impl AsRef<Path>) -> Result<Vec<MatchOutcome>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::document(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::document(path, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn cosine_cases() {
        let a = [1.0f32, 2.0, -3.0];
        assert_relative_eq!(cosine_distance(&a, &a).unwrap(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 1.0);
        let neg: Vec<f32> = a.iter().map(|v| -v).collect();
        assert_relative_eq!(cosine_distance(&a, &neg).unwrap(), 2.0, epsilon = 1e-12);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(cosine_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn normalize_cases() {
        let s = normalize_scores(&[0.2, 0.6, 1.0]).unwrap();
        assert_relative_eq!(s[0], 0.999);
        assert_relative_eq!(s[1], 0.5, epsilon = 1e-12);
        assert_relative_eq!(s[2], 0.001);
        assert_eq!(normalize_scores(&[0.3; 4]).unwrap(), vec![0.5; 4]);
        assert_eq!(normalize_scores(&[0.0, 1.0]).unwrap(), vec![0.999, 0.001]);
        assert!(normalize_scores(&[1.0]).is_err());
    }

    #[test]
    fn quality_ratio_hand_value() {
        assert_relative_eq!(quality_ratio(&[0.999, 0.5, 0.3], 0, 0), 1.998);
        // window swallows everything
        assert_eq!(quality_ratio(&[0.999, 0.5, 0.3], 1, 1), 1.0);
        // inclusive window edges are excluded from the runner-up
        assert_relative_eq!(quality_ratio(&[0.2, 0.999, 0.5, 0.333], 1, 1), 3.0);
    }

    fn pm(v: &[f32]) -> PooledMatrix {
        PooledMatrix::new(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn exact_match_retrieval() {
        let refs: Vec<PooledMatrix> = (0..5)
            .map(|i| pm(&[i as f32, 1.0, (i * i) as f32 - 3.0]))
            .collect();
        let kept = KeptSet::all(3).unwrap();
        let cfg = MatcherConfig { exclusion_window: 0 };
        let out = match_query("q", &refs[3], &refs, &kept, &cfg).unwrap();
        assert_eq!(out.best_index, 3);
        assert_eq!(out.normalized_scores[3], SCORE_MAX);
        assert!(out.quality >= 1.0);
        assert_eq!(out.query_id, "q");
    }

    #[test]
    fn identical_references_are_degenerate() {
        let refs = vec![pm(&[1.0, 2.0]); 4];
        let out = match_query("q", &pm(&[2.0, 1.0]), &refs, &KeptSet::all(2).unwrap(), &MatcherConfig::default())
            .unwrap();
        assert_eq!(out.normalized_scores, vec![0.5; 4]);
        assert_eq!(out.quality, 1.0);
        assert_eq!(out.best_index, 0);
    }

    #[test]
    fn needs_two_references() {
        let r = vec![pm(&[1.0])];
        assert!(match_query("q", &r[0], &r, &KeptSet::all(1).unwrap(), &MatcherConfig::default()).is_err());
    }

    #[test]
    fn match_table_roundtrip() {
        let outs = vec![
            MatchOutcome {
                query_id: "a".into(),
                best_index: 4,
                quality: 1.25,
                best_distance: 0.1,
                normalized_scores: vec![],
            },
            MatchOutcome {
                query_id: "b,c".into(),
                best_index: 0,
                quality: 1.0 / 3.0,
                best_distance: 0.0,
                normalized_scores: vec![],
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_match_table(&path, &outs).unwrap();
        assert_eq!(read_match_table(&path).unwrap(), outs);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("query_id,best_index,quality,best_distance\n"));
    }

    proptest! {
        #[test]
        fn best_index_is_raw_argmin(
            refs in proptest::collection::vec(proptest::collection::vec(-3.0f32..3.0, 6), 2..20),
            q in proptest::collection::vec(-3.0f32..3.0, 6),
            w in 0usize..4,
        ) {
            let refs: Vec<PooledMatrix> = refs.iter().map(|r| PooledMatrix::new(3, 2, r.clone()).unwrap()).collect();
            let q = PooledMatrix::new(3, 2, q).unwrap();
            let kept = KeptSet::all(3).unwrap();
            let out = match_query("q", &q, &refs, &kept, &MatcherConfig { exclusion_window: w }).unwrap();
            let raw: Vec<f64> = refs.iter().map(|r| cosine_distance(r.values(), q.values()).unwrap()).collect();
            let (lo, hi) = min_max(&raw);
            if hi > lo {
                prop_assert_eq!(raw[out.best_index], lo);
                prop_assert!(raw[..out.best_index].iter().all(|&d| d > lo));
            }
        }

        #[test]
        fn quality_monotone_in_runner_up(rest in proptest::collection::vec(0.001f64..0.9, 3..10), bump in 0.0f64..0.09) {
            let mut scores = vec![0.999];
            scores.extend(rest);
            let base = quality_ratio(&scores, 0, 0);
            let (i, _) = scores.iter().enumerate().skip(1)
                .fold((1, f64::MIN), |a, (i, &s)| if s > a.1 { (i, s) } else { a });
            scores[i] += bump;
            prop_assert!(quality_ratio(&scores, 0, 0) <= base);
        }
    }
}
