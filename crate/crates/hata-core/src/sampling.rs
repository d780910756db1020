//! Training-triplet construction.
//!
//! Each group pairs one query with every key in its causal prefix: the keys
//! whose exact dot-product score lands in the top 10% get linearly decayed
//! positive labels in [1, 20]; all other keys get label −1.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::seeds;

/// One query with its causal prefix of keys and per-key similarity labels.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletGroup {
    /// Query vector, length d.
    pub query: Vec<f32>,
    /// All keys visible to the query (its causal prefix), one row per key.
    pub keys: Matrix,
    /// Per-key labels: positives in [1, 20], negatives exactly −1.
    pub labels: Vec<f32>,
    /// Which sequence the group came from.
    pub sequence_id: u64,
    /// Position of the sampled query inside that sequence.
    pub query_index: usize,
}

impl TripletGroup {
    pub fn dim(&self) -> usize {
        self.query.len()
    }

    pub fn key_count(&self) -> usize {
        self.keys.rows()
    }
}

/// Number of positive labels for a prefix of `total` keys: top 10%, at least 1.
pub fn positive_count(total: usize) -> usize {
    total.div_ceil(10)
}

/// Samples a query position from the back half of a sequence: m ∈ [⌊n/2⌋, n).
pub fn sample_query_index(n: usize, rng: &mut ChaCha12Rng) -> Result<usize> {
    if n < 2 {
        return Err(Error::InvalidArgument {
            op: "sample_query_index",
            detail: format!("sequence length {} < 2", n),
        });
    }
    Ok(rng.random_range(n / 2..n))
}

/// Builds the triplet group for query position `m`: keys are the causal
/// prefix rows 0..=m of `keys`, ranked by exact dot product against query
/// row `m` (ties broken toward the lower key index).
pub fn build_triplet_group(
    queries: &Matrix,
    keys: &Matrix,
    m: usize,
    sequence_id: u64,
) -> Result<TripletGroup> {
    if queries.rows() != keys.rows() || queries.cols() != keys.cols() {
        return Err(Error::Dimension {
            op: "build_triplet_group",
            detail: format!(
                "queries {}x{} vs keys {}x{}",
                queries.rows(),
                queries.cols(),
                keys.rows(),
                keys.cols()
            ),
        });
    }
    if m >= keys.rows() {
        return Err(Error::IndexOutOfRange { index: m, len: keys.rows() });
    }

    let total = m + 1;
    let q = queries.row(m);
    let mut scores: Vec<f64> = Vec::with_capacity(total);
    for i in 0..total {
        scores.push(dot64(q, keys.row(i)));
    }

    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).unwrap().then_with(|| a.cmp(&b))
    });

    let p = positive_count(total);
    let mut labels = vec![-1.0f32; total];
    for (rank, &idx) in order[..p].iter().enumerate() {
        let denom = p.saturating_sub(1).max(1) as f64;
        labels[idx] = (20.0 - 19.0 * rank as f64 / denom) as f32;
    }

    let mut prefix = Matrix::zeros(0, keys.cols());
    for i in 0..total {
        prefix.push_row(keys.row(i))?;
    }

    Ok(TripletGroup {
        query: q.to_vec(),
        keys: prefix,
        labels,
        sequence_id,
        query_index: m,
    })
}

/// Samples `groups_per_sequence` triplet groups from every (Q, K) sequence,
/// then shuffles the combined list. Fully determined by `seed`.
pub fn sample_dataset(
    sequences: &[(Matrix, Matrix)],
    groups_per_sequence: usize,
    seed: u64,
) -> Result<Vec<TripletGroup>> {
    if sequences.is_empty() {
        return Err(Error::Empty { op: "sample_dataset" });
    }
    let mut groups = Vec::with_capacity(sequences.len() * groups_per_sequence);
    for (sid, (q, k)) in sequences.iter().enumerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(seeds::derive_indexed(seed, "sequence", sid as u64));
        for _ in 0..groups_per_sequence {
            let m = sample_query_index(k.rows(), &mut rng)?;
            groups.push(build_triplet_group(q, k, m, sid as u64)?);
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seeds::derive(seed, "shuffle"));
    groups.shuffle(&mut rng);
    Ok(groups)
}

fn dot64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Parameters of the synthetic clustered workload used for desk-scale
/// training and evaluation.
///
/// Queries and keys share a set of cluster centers living in the first
/// `informative_dims` coordinates. Keys additionally carry strong noise in
/// the remaining coordinates while queries barely do, so exact scores are
/// governed by the informative subspace but a random sign-projection of the
/// keys is not — the structure a trained hash can exploit.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub d: usize,
    pub informative_dims: usize,
    pub clusters: usize,
    /// Std-dev of cluster-center coordinates.
    pub center_scale: f32,
    /// Within-cluster key spread inside the informative subspace.
    pub key_jitter: f32,
    /// Key noise outside the informative subspace.
    pub key_nuisance: f32,
    /// Query spread inside the informative subspace.
    pub query_jitter: f32,
    /// Query noise outside the informative subspace.
    pub query_nuisance: f32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            d: 128,
            informative_dims: 32,
            clusters: 64,
            center_scale: 1.0,
            key_jitter: 0.5,
            key_nuisance: 2.0,
            query_jitter: 0.25,
            query_nuisance: 0.05,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.informative_dims == 0 || self.informative_dims > self.d {
            return Err(Error::InvalidArgument {
                op: "SyntheticConfig",
                detail: format!("informative_dims {} must be in 1..={}", self.informative_dims, self.d),
            });
        }
        if self.clusters == 0 {
            return Err(Error::InvalidArgument {
                op: "SyntheticConfig",
                detail: "clusters must be ≥ 1".into(),
            });
        }
        Ok(())
    }
}

/// Generates one synthetic (Q, K) sequence of length `n`.
pub fn generate_sequence(cfg: &SyntheticConfig, n: usize, seed: u64) -> Result<(Matrix, Matrix)> {
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let mut centers = Matrix::zeros(cfg.clusters, cfg.informative_dims);
    for v in centers.data_mut() {
        *v = cfg.center_scale * rng.sample::<f32, _>(StandardNormal);
    }

    let mut q = Matrix::zeros(n, cfg.d);
    let mut k = Matrix::zeros(n, cfg.d);
    for i in 0..n {
        let qc = rng.random_range(0..cfg.clusters);
        fill_point(q.row_mut(i), centers.row(qc), cfg.query_jitter, cfg.query_nuisance, &mut rng);
        // Keys cycle through the clusters so every causal prefix covers them
        // near-evenly: each query's top scorers are its home-cluster keys, and
        // balanced codes that split the clusters 50/50 per bit remain exactly
        // achievable.
        let kc = i % cfg.clusters;
        fill_point(k.row_mut(i), centers.row(kc), cfg.key_jitter, cfg.key_nuisance, &mut rng);
    }
    Ok((q, k))
}

fn fill_point(row: &mut [f32], center: &[f32], jitter: f32, nuisance: f32, rng: &mut ChaCha12Rng) {
    for (x, &c) in row.iter_mut().zip(center) {
        *x = c + jitter * rng.sample::<f32, _>(StandardNormal);
    }
    for x in row.iter_mut().skip(center.len()) {
        *x = nuisance * rng.sample::<f32, _>(StandardNormal);
    }
}
