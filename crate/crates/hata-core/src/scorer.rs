//! Hamming scoring and top-k selection over packed code caches.
//!
//! Scores are stored as similarities (`rbit − hamming distance`) so that
//! "take the k largest" reads naturally; since the map from distance to
//! similarity is a constant shift, selection is unchanged either way.

use crate::codec::PackedCodes;
use crate::error::{Error, Result};

/// One similarity score per cached key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScoreVector {
    values: Vec<u32>,
}

impl ScoreVector {
    pub fn from_values(values: Vec<u32>) -> Self {
        ScoreVector { values }
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Number of differing bits between two equal-width packed codes.
pub fn hamming(a: &[u32], b: &[u32]) -> Result<u32> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            op: "hamming",
            detail: format!("{} words vs {} words", a.len(), b.len()),
        });
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| (x ^ y).count_ones()).sum())
}

/// Scores a query code against every cached key code; entry i is
/// `rbit − hamming(q, cache[i])`. An empty cache yields an empty vector.
pub fn score_cache(q_code: &[u32], cache: &PackedCodes) -> Result<ScoreVector> {
    let wpr = cache.words_per_row();
    if q_code.len() != wpr {
        return Err(Error::Dimension {
            op: "score_cache",
            detail: format!("query code has {} words, cache rows have {}", q_code.len(), wpr),
        });
    }
    let rbit = cache.rbit() as u32;
    let mut values = Vec::with_capacity(cache.rows());
    for row in cache.words().chunks_exact(wpr) {
        let mut dist = 0u32;
        for (&q, &k) in q_code.iter().zip(row) {
            dist += (q ^ k).count_ones();
        }
        values.push(rbit - dist);
    }
    Ok(ScoreVector { values })
}

/// Sums scores elementwise across the query heads that share one KV head.
pub fn aggregate_gqa(per_head: &[ScoreVector]) -> Result<ScoreVector> {
    let first = per_head.first().ok_or(Error::Empty { op: "aggregate_gqa" })?;
    let mut values = first.values.clone();
    for (h, sv) in per_head.iter().enumerate().skip(1) {
        if sv.len() != values.len() {
            return Err(Error::Dimension {
                op: "aggregate_gqa",
                detail: format!("head 0 has {} scores, head {} has {}", values.len(), h, sv.len()),
            });
        }
        for (acc, &v) in values.iter_mut().zip(&sv.values) {
            *acc += v;
        }
    }
    Ok(ScoreVector { values })
}

/// Indices of the k largest scores, ties broken toward the larger index
/// (the more recent token). Returned sorted ascending; k is clamped to the
/// number of scores.
pub fn topk_select(scores: &ScoreVector, k: usize) -> Vec<usize> {
    let n = scores.len();
    let k = k.min(n);
    if k == 0 {
        return Vec::new();
    }
    let mut order: Vec<(u32, usize)> =
        scores.values.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let best_first =
        |a: &(u32, usize), b: &(u32, usize)| b.0.cmp(&a.0).then_with(|| b.1.cmp(&a.1));
    if k < n {
        order.select_nth_unstable_by(k - 1, best_first);
    }
    let mut idx: Vec<usize> = order[..k].iter().map(|&(_, i)| i).collect();
    idx.sort_unstable();
    idx
}
