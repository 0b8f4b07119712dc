//! Max pyramid spatial pooling: each `W x H` feature map becomes five values,
//! the global maximum followed by the maxima of the four quadrants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::FeatureTensor;

/// Values per feature map produced by [`pyramid_pool`]: global, TL, TR, BL, BR.
pub const PYRAMID_SLOTS: usize = 5;

/// `C x P` pooled activations, stored row-major (one row per channel).
#[derive(Debug, Clone, PartialEq)]
pub struct PooledMatrix {
    channels: usize,
    per_map_dim: usize,
    values: Vec<f32>,
}

impl PooledMatrix {
    pub fn new(channels: usize, per_map_dim: usize, values: Vec<f32>) -> Result<Self> {
        if channels == 0 || per_map_dim == 0 {
            return Err(Error::Shape(format!(
                "pooled matrix needs positive dims, got {channels}x{per_map_dim}"
            )));
        }
        if values.len() != channels * per_map_dim {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: channels * per_map_dim,
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            channels,
            per_map_dim,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn per_map_dim(&self) -> usize {
        self.per_map_dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn row(&self, channel: usize) -> &[f32] {
        let start = channel * self.per_map_dim;
        &self.values[start..start + self.per_map_dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.values.chunks_exact(self.per_map_dim)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.per_map_dim == other.per_map_dim
    }
}

/// Ascending, duplicate-free set of channel indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct KeptSet(Vec<usize>);

impl KeptSet {
    /// Sorts and deduplicates. Fails on an empty set.
    pub fn new(indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut v: Vec<usize> = indices.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        if v.is_empty() {
            return Err(Error::EmptyKeptSet);
        }
        Ok(Self(v))
    }

    pub fn all(channels: usize) -> Result<Self> {
        Self::new(0..channels)
    }

    /// Checks every index is below `channels`.
    pub fn check(&self, channels: usize) -> Result<()> {
        match self.0.last() {
            Some(&index) if index >= channels => Err(Error::ChannelOutOfRange { index, channels }),
            _ => Ok(()),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, channel: usize) -> bool {
        self.0.binary_search(&channel).is_ok()
    }
}

impl TryFrom<Vec<usize>> for KeptSet {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<KeptSet> for Vec<usize> {
    fn from(k: KeptSet) -> Self {
        k.0
    }
}

/// Pools every channel of `t` into `[global, TL, TR, BL, BR]` maxima.
///
/// Rows split at `H / 2` and columns at `W / 2` (floor), so the quadrants
/// partition the grid. A quadrant left empty by a unit dimension reports the
/// global maximum.
pub fn pyramid_pool(t: &FeatureTensor) -> PooledMatrix {
    let (w, h, c) = (t.width(), t.height(), t.channels());
    let (row_split, col_split) = (h / 2, w / 2);
    // quadrant maxima laid out [quadrant][channel]
    let mut quad = vec![f32::NEG_INFINITY; 4 * c];
    for row in 0..h {
        let bottom = usize::from(row >= row_split);
        for col in 0..w {
            let right = usize::from(col >= col_split);
            let q = 2 * bottom + right;
            let acc = &mut quad[q * c..(q + 1) * c];
            for (m, &v) in acc.iter_mut().zip(t.cell(row, col)) {
                if v > *m {
                    *m = v;
                }
            }
        }
    }
    let mut values = Vec::with_capacity(c * PYRAMID_SLOTS);
    for ch in 0..c {
        let q = [quad[ch], quad[c + ch], quad[2 * c + ch], quad[3 * c + ch]];
        let global = q.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        values.push(global);
        values.extend(q.iter().map(|&v| if v == f32::NEG_INFINITY { global } else { v }));
    }
    PooledMatrix {
        channels: c,
        per_map_dim: PYRAMID_SLOTS,
        values,
    }
}

/// Concatenates the rows of the kept channels in ascending channel order.
pub fn flatten(p: &PooledMatrix, kept: &KeptSet) -> Result<Vec<f32>> {
    kept.check(p.channels)?;
    let mut out = Vec::with_capacity(kept.len() * p.per_map_dim);
    for &ch in kept.indices() {
        out.extend_from_slice(p.row(ch));
    }
    Ok(out)
}
