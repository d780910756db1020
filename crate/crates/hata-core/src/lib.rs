//! Hash-aware top-k attention.
//!
//! This crate learns binary hash functions that preserve query–key score
//! ordering, encodes cached keys into bit-packed codes, and selects the
//! tokens worth attending to by Hamming distance instead of dense dot
//! products. The pieces compose into a small decode engine with a simulated
//! KV cache, plus oracles that measure how faithful the cheap selection is.
//!
//! Module map:
//! - [`linalg`]: dense row-major f32 matrices and SGD with momentum.
//! - [`seeds`]: stable derivation of named sub-seeds from one root seed.
//! - [`sampling`]: causal triplet-group construction and the synthetic
//!   clustered workload generator.
//! - [`trainer`]: the relaxed hashing loss, its analytic gradient, training
//!   loop, and checkpoint IO.
//! - [`codec`]: sign binarization and bit-packing of hash codes.
//! - [`scorer`]: Hamming similarity, GQA score aggregation, top-k selection.
//! - [`attention`]: numerically careful full and index-gathered softmax
//!   attention sharing one core.
//! - [`tensorio`]: the `.htns` tensor and `.htrp` triplet file formats.
//! - [`engine`]: per-head KV/code caches, budgeted decode, snapshots.
//! - [`eval`]: exact-ranking oracles, recall/output-error reports, sweeps,
//!   and the scoring throughput benchmark.

pub mod attention;
pub mod codec;
pub mod engine;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod sampling;
pub mod scorer;
pub mod seeds;
pub mod tensorio;
pub mod trainer;

pub use attention::AttnHeadShape;
pub use codec::PackedCodes;
pub use engine::{Budget, DecodeOutput, Engine, EngineConfig, HeadStep, KVCacheState, SyntheticDecoder};
pub use error::{Error, Result};
pub use eval::{BenchReport, RecallReport, SweepAxis, SweepRow, WorkloadConfig};
pub use linalg::Matrix;
pub use sampling::{SyntheticConfig, TripletGroup};
pub use scorer::ScoreVector;
pub use trainer::{HashWeights, HeadWeightsMap, LossBreakdown, TrainConfig};
