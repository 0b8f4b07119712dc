//! Dataset manifests and correspondence tables.
//!
//! A manifest is a JSON document describing one traverse:
//!
//! ```json
//! {
//!   "layer_name": "conv3",
//!   "gt_mode": "metric",
//!   "entries": [
//!     { "id": "000000", "tensor_path": "000000.fmap", "position": [12.5, -3.0] }
//!   ]
//! }
//! ```
//!
//! Relative `tensor_path`s resolve against the manifest's directory. Entries
//! are kept in traverse order.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar position in meters (already projected).
pub type Position = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GtMode {
    Frame,
    Metric,
}

impl GtMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GtMode::Frame => "frame",
            GtMode::Metric => "metric",
        }
    }
}

impl std::str::FromStr for GtMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frame" => Ok(GtMode::Frame),
            "metric" => Ok(GtMode::Metric),
            other => Err(Error::Config(format!(
                "unknown ground-truth mode {other:?} (expected frame or metric)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub tensor_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Position>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default)]
    pub layer_name: String,
    pub gt_mode: GtMode,
    pub entries: Vec<ManifestEntry>,
    /// Directory relative tensor paths are resolved against. Not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(layer_name: impl Into<String>, gt_mode: GtMode, entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self {
            layer_name: layer_name.into(),
            gt_mode,
            entries,
            base_dir: PathBuf::new(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.entries.len());
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
            if self.gt_mode == GtMode::Metric && e.position.is_none() {
                return Err(Error::MissingPosition(e.id.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tensor_path(&self, index: usize) -> PathBuf {
        let p = Path::new(&self.entries[index].tensor_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn positions(&self) -> Vec<Option<Position>> {
        self.entries.iter().map(|e| e.position).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::document(path, e))?;
    m.validate()?;
    m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(m)
}

pub fn save_manifest(m: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    m.validate()?;
    let mut text = serde_json::to_string_pretty(m).map_err(|e| Error::document(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CorrespondenceRow {
    query_id: String,
    reference_index: usize,
}

/// Writes a `query_id,reference_index` table.
pub fn save_correspondences(
    path: impl AsRef<Path>,
    rows: impl IntoIterator<Item = (String, usize)>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::document(path, e))?;
    for (query_id, reference_index) in rows {
        w.serialize(CorrespondenceRow {
            query_id,
            reference_index,
        })
        .map_err(|e| Error::document(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a correspondence table and orders it to match `queries`.
/// Every query id must appear exactly once.
pub fn load_correspondences(path: impl AsRef<Path>, queries: &DatasetManifest) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::document(path, e))?;
    let mut out: Vec<Option<usize>> = vec![None; queries.len()];
    for row in r.deserialize::<CorrespondenceRow>() {
        let row = row.map_err(|e| Error::document(path, e))?;
        let Some(qi) = queries.index_of(&row.query_id) else {
            continue;
        };
        if out[qi].replace(row.reference_index).is_some() {
            return Err(Error::DuplicateId(row.query_id));
        }
    }
    out.into_iter()
        .zip(&queries.entries)
        .map(|(v, e)| {
            v.ok_or_else(|| Error::document(path, format!("no correspondence for query {:?}", e.id)))
        })
        .collect()
}

/// Truth reference for each query when no explicit table is given: the same
/// ordinal in frame mode (aligned traverses), the nearest reference position
/// in metric mode.
pub fn implied_correspondences(queries: &DatasetManifest, refs: &DatasetManifest) -> Result<Vec<usize>> {
    match queries.gt_mode {
        GtMode::Frame => {
            if queries.len() > refs.len() {
                return Err(Error::Config(format!(
                    "frame-aligned correspondence needs at least {} references, found {}",
                    queries.len(),
                    refs.len()
                )));
            }
            Ok((0..queries.len()).collect())
        }
        GtMode::Metric => queries
            .entries
            .iter()
            .map(|q| {
                let qp = q.position.ok_or_else(|| Error::MissingPosition(q.id.clone()))?;
                let mut best: Option<(usize, f64)> = None;
                for (i, r) in refs.entries.iter().enumerate() {
                    let rp = r.position.ok_or_else(|| Error::MissingPosition(r.id.clone()))?;
                    let d = (qp[0] - rp[0]).hypot(qp[1] - rp[1]);
                    if best.is_none_or(|(_, bd)| d < bd) {
                        best = Some((i, d));
                    }
                }
                best.map(|(i, _)| i).ok_or(Error::TooFew {
                    what: "references",
                    needed: 1,
                    found: 0,
                })
            })
            .collect(),
    }
}
