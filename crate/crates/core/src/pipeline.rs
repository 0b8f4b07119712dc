//! Batch helpers shared by the command-line tool and the test suites.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::matcher::{MatchOutcome, MatcherConfig, TemplateDb};
use crate::pooling::{pyramid_pool, PooledMatrix};
use crate::tensor::{read_tensor, FeatureTensor};

pub fn pool_all(tensors: &[FeatureTensor]) -> Vec<PooledMatrix> {
    tensors.par_iter().map(pyramid_pool).collect()
}

/// Reads and pools every tensor of a traverse, in manifest order. All
/// tensors must share one channel count.
pub fn load_pooled(manifest: &DatasetManifest) -> Result<Vec<PooledMatrix>> {
    let pooled = (0..manifest.len())
        .into_par_iter()
        .map(|i| read_tensor(manifest.tensor_path(i)).map(|t| pyramid_pool(&t)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = pooled.first() {
        if let Some((i, p)) = pooled.iter().enumerate().find(|(_, p)| !p.same_shape(first)) {
            return Err(Error::Shape(format!(
                "{} has {} channels, {} has {}",
                manifest.entries[i].id,
                p.channels(),
                manifest.entries[0].id,
                first.channels()
            )));
        }
    }
    Ok(pooled)
}

/// Matches every query in order, timing each one individually. Runs on the
/// calling thread so the per-query times are not skewed by contention.
pub fn match_all<S: AsRef<str>>(
    db: &TemplateDb,
    ids: &[S],
    queries: &[PooledMatrix],
    cfg: &MatcherConfig,
) -> Result<(Vec<MatchOutcome>, Vec<Duration>)> {
    let mut outcomes = Vec::with_capacity(queries.len());
    let mut times = Vec::with_capacity(queries.len());
    for (id, q) in ids.iter().zip(queries) {
        let start = Instant::now();
        let out = db.match_pooled(id.as_ref(), q, cfg)?;
        times.push(start.elapsed());
        outcomes.push(out);
    }
    Ok((outcomes, times))
}
