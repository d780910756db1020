//! Shared setup for the scoring and encoding benchmarks: deterministic key
//! caches, packed code caches, and query vectors at benchmark scale.

use hata_core::codec::{encode_row, hash_encode};
use hata_core::sampling::{generate_sequence, SyntheticConfig};
use hata_core::{HashWeights, Matrix, PackedCodes};

pub struct ScoringSetup {
    pub keys: Matrix,
    pub codes: PackedCodes,
    pub query: Vec<f32>,
    pub query_code: Vec<u32>,
}

/// Builds an `n`-key cache with its packed codes plus one encoded query.
pub fn scoring_setup(n: usize, d: usize, rbit: usize, seed: u64) -> ScoringSetup {
    let synth = SyntheticConfig { d, informative_dims: d / 4, ..SyntheticConfig::default() };
    let (queries, keys) = generate_sequence(&synth, n, seed).expect("generate benchmark cache");
    let weights = HashWeights::random(0, 0, d, rbit, seed ^ 0x5eed).expect("init weights");
    let codes = hash_encode(&keys, &weights).expect("encode benchmark cache");
    let query = queries.row(n - 1).to_vec();
    let query_code = encode_row(&query, &weights).expect("encode query");
    ScoringSetup { keys, codes, query, query_code }
}

/// Dense real32 scoring baseline: one dot product per cached key.
pub fn dense_scores(query: &[f32], keys: &Matrix) -> Vec<f32> {
    (0..keys.rows())
        .map(|i| query.iter().zip(keys.row(i)).map(|(a, b)| a * b).sum())
        .collect()
}
