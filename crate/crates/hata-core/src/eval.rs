//! Selection-quality and throughput evaluation.
//!
//! The oracles here are deliberately independent of the fast paths they
//! judge: `exact_topk` ranks by f64 dot products (never by Hamming scores),
//! and recall/output-error compare the hash-selected attention against dense
//! attention over the same cache.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::attention::{full_attention, sparse_attention};
use crate::codec::{encode_row, hash_encode, PackedCodes};
use crate::engine::Budget;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sampling::{generate_sequence, sample_dataset, SyntheticConfig, TripletGroup};
use crate::scorer::score_cache;
use crate::seeds;
use crate::trainer::{train, HashWeights, LossBreakdown, TrainConfig};

/// Exact top-k indices of `query · key` over all rows of `keys`, computed in
/// f64. Ties break toward the larger (more recent) index; the result is
/// sorted ascending. This is the reference ranking the hash path is judged
/// against.
pub fn exact_topk(query: &[f32], keys: &Matrix, k: usize) -> Result<Vec<usize>> {
    if query.len() != keys.cols() {
        return Err(Error::Dimension {
            op: "exact_topk",
            detail: format!("query has {} dims, keys have {}", query.len(), keys.cols()),
        });
    }
    if k > keys.rows() {
        return Err(Error::InvalidArgument {
            op: "exact_topk",
            detail: format!("k {} exceeds the {} cached keys", k, keys.rows()),
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut scored: Vec<(f64, usize)> = (0..keys.rows())
        .map(|i| {
            let row = keys.row(i);
            let dot: f64 =
                query.iter().zip(row).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
            (dot, i)
        })
        .collect();
    let best_first =
        |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1));
    scored.select_nth_unstable_by(k - 1, best_first);
    let mut idx: Vec<usize> = scored[..k].iter().map(|&(_, i)| i).collect();
    idx.sort_unstable();
    Ok(idx)
}

/// Fraction of the exact top-k contained in the selected set. Both sets must
/// have the same size k, which makes the metric symmetric in its arguments.
pub fn recall_at_k(selected: &[usize], exact: &[usize]) -> Result<f64> {
    if exact.is_empty() {
        return Err(Error::Empty { op: "recall_at_k" });
    }
    if selected.len() != exact.len() {
        return Err(Error::InvalidArgument {
            op: "recall_at_k",
            detail: format!(
                "selected holds {} indices, exact holds {}",
                selected.len(),
                exact.len()
            ),
        });
    }
    let hits = exact.iter().filter(|i| selected.contains(i)).count();
    Ok(hits as f64 / exact.len() as f64)
}

/// (L∞ difference, cosine similarity) between an approximate attention
/// output and the dense reference. Errors when the reference is the zero
/// vector, where cosine similarity is undefined.
pub fn output_error(approx: &[f32], dense: &[f32]) -> Result<(f64, f64)> {
    if approx.len() != dense.len() {
        return Err(Error::Dimension {
            op: "output_error",
            detail: format!("outputs have {} and {} dims", approx.len(), dense.len()),
        });
    }
    let mut linf = 0.0f64;
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nd = 0.0f64;
    for (&a, &d) in approx.iter().zip(dense) {
        let (a, d) = (f64::from(a), f64::from(d));
        linf = linf.max((a - d).abs());
        dot += a * d;
        na += a * a;
        nd += d * d;
    }
    if nd == 0.0 {
        return Err(Error::InvalidArgument {
            op: "output_error",
            detail: "dense reference output is the zero vector".into(),
        });
    }
    let cosine = if na == 0.0 { 0.0 } else { dot / (na.sqrt() * nd.sqrt()) };
    Ok((linf, cosine))
}

/// End-to-end workload: train hash weights on synthetic sequences, then
/// measure selection quality on a fresh cache drawn from the same
/// distribution family.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadConfig {
    pub synth: SyntheticConfig,
    pub train: TrainConfig,
    /// Hash bits used when the sweep axis does not override them.
    pub rbit: usize,
    pub train_sequences: usize,
    pub train_seq_len: usize,
    pub groups_per_sequence: usize,
    /// Evaluation cache length.
    pub cache_n: usize,
    /// Evaluation queries (taken from the tail of the evaluation sequence).
    pub queries: usize,
    /// Top-k size the recall oracle scores against.
    pub k: usize,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            synth: SyntheticConfig::default(),
            train: TrainConfig::default(),
            rbit: 128,
            train_sequences: 16,
            train_seq_len: 512,
            groups_per_sequence: 8,
            cache_n: 4096,
            queries: 64,
            k: 64,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        let bad = |detail: String| Error::InvalidArgument { op: "WorkloadConfig", detail };
        if self.rbit == 0 || !self.rbit.is_multiple_of(32) {
            return Err(bad(format!("rbit {} must be a positive multiple of 32", self.rbit)));
        }
        if self.train_sequences == 0 || self.groups_per_sequence == 0 {
            return Err(bad("need at least one training sequence and group".into()));
        }
        if self.train_seq_len < 2 {
            return Err(bad("train_seq_len must be ≥ 2 to sample causal prefixes".into()));
        }
        if self.cache_n == 0 {
            return Err(bad("cache_n must be ≥ 1".into()));
        }
        if self.k == 0 || self.k > self.cache_n {
            return Err(bad(format!("k {} must lie in [1, cache_n {}]", self.k, self.cache_n)));
        }
        if self.queries == 0 || self.queries > self.cache_n {
            return Err(bad(format!(
                "queries {} must lie in [1, cache_n {}]",
                self.queries, self.cache_n
            )));
        }
        Ok(())
    }
}

/// The untrained baseline: the same random projection training starts from.
pub fn random_workload_head(cfg: &WorkloadConfig, rbit: usize, seed: u64) -> Result<HashWeights> {
    HashWeights::random(0, 0, cfg.synth.d, rbit, seeds::derive(seed, "init"))
}

/// Materializes the training dataset for one workload seed: fresh synthetic
/// sequences, then triplet groups sampled from each. The named sub-seeds make
/// this reproducible from (cfg, seed) alone.
pub fn workload_dataset(cfg: &WorkloadConfig, seed: u64) -> Result<Vec<TripletGroup>> {
    cfg.validate()?;
    let sequences: Vec<(Matrix, Matrix)> = (0..cfg.train_sequences)
        .map(|i| {
            generate_sequence(
                &cfg.synth,
                cfg.train_seq_len,
                seeds::derive_indexed(seed, "train-seq", i as u64),
            )
        })
        .collect::<Result<_>>()?;
    sample_dataset(&sequences, cfg.groups_per_sequence, seeds::derive(seed, "sample"))
}

/// Trains one head on freshly generated synthetic sequences. Returns the
/// weights plus the per-epoch held-out loss history. Fully determined by
/// (cfg, rbit, seed); the random init equals `random_workload_head`.
pub fn train_workload_head(
    cfg: &WorkloadConfig,
    rbit: usize,
    seed: u64,
) -> Result<(HashWeights, Vec<LossBreakdown>)> {
    let dataset = workload_dataset(cfg, seed)?;
    let init = random_workload_head(cfg, rbit, seed)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = seeds::derive(seed, "train");
    train(&dataset, &train_cfg, Some(init))
}

/// Selection quality of one set of hash weights on a fresh evaluation cache.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RecallReport {
    pub rbit: usize,
    /// Selection size scored: the number of tokens the budget resolved to at
    /// cache length `n`. Recall compares the hash-selected k tokens against
    /// the exact top-k, so both sets share this size.
    pub k: usize,
    pub n: usize,
    pub queries: usize,
    /// Mean recall@k over all queries.
    pub recall: f64,
    /// Worst L∞ gap between budgeted and dense attention outputs.
    pub linf: f64,
    /// Worst cosine similarity between budgeted and dense attention outputs.
    pub cosine: f64,
}

/// Evaluates weights on a fresh synthetic cache: for every query, the hash
/// path selects `budget` tokens, and the report aggregates recall against the
/// same-sized exact top-k plus the attention output error of the selected set
/// against dense attention.
pub fn eval_recall(
    cfg: &WorkloadConfig,
    weights: &HashWeights,
    budget: Budget,
    seed: u64,
) -> Result<RecallReport> {
    cfg.validate()?;
    budget.validate()?;
    if weights.d() != cfg.synth.d {
        return Err(Error::Dimension {
            op: "eval_recall",
            detail: format!("weights cover {} dims, workload uses {}", weights.d(), cfg.synth.d),
        });
    }
    let (q_all, k_all) =
        generate_sequence(&cfg.synth, cfg.cache_n, seeds::derive(seed, "eval-seq"))?;
    let mut values = Matrix::zeros(cfg.cache_n, cfg.synth.d);
    let mut vrng = ChaCha12Rng::seed_from_u64(seeds::derive(seed, "eval-values"));
    for v in values.data_mut() {
        *v = StandardNormal.sample(&mut vrng);
    }
    let codes = hash_encode(&k_all, weights)?;
    let budget_tokens = budget.resolve(cfg.cache_n);

    let mut recall_sum = 0.0;
    let mut linf_max = 0.0f64;
    let mut cosine_min = f64::INFINITY;
    for t in (cfg.cache_n - cfg.queries)..cfg.cache_n {
        let q = q_all.row(t);
        let exact = exact_topk(q, &k_all, budget_tokens)?;
        let q_code = encode_row(q, weights)?;
        let scores = score_cache(&q_code, &codes)?;
        let selected = crate::scorer::topk_select(&scores, budget_tokens);
        recall_sum += recall_at_k(&selected, &exact)?;
        let dense = full_attention(q, &k_all, &values)?;
        let sparse = sparse_attention(q, &k_all, &values, &selected)?;
        let (linf, cosine) = output_error(&sparse, &dense)?;
        linf_max = linf_max.max(linf);
        cosine_min = cosine_min.min(cosine);
    }
    Ok(RecallReport {
        rbit: weights.r(),
        k: budget_tokens,
        n: cfg.cache_n,
        queries: cfg.queries,
        recall: recall_sum / cfg.queries as f64,
        linf: linf_max,
        cosine: cosine_min,
    })
}

/// One swept parameter: token budgets at fixed hash width, or hash widths at
/// a top-k budget.
#[derive(Clone, Debug, PartialEq)]
pub enum SweepAxis {
    Budget(Vec<Budget>),
    Rbit(Vec<usize>),
}

/// One CSV row of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub axis: &'static str,
    pub value: String,
    pub seed: u64,
    pub report: RecallReport,
}

/// Runs the workload across every (value, seed) cell. Budget sweeps train
/// once per seed and reuse the weights across budgets; rbit sweeps retrain
/// per (rbit, seed). Row order is values-major, then seeds.
pub fn sweep(cfg: &WorkloadConfig, axis: &SweepAxis, run_seeds: &[u64]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if run_seeds.is_empty() {
        return Err(Error::Empty { op: "sweep" });
    }
    match axis {
        SweepAxis::Budget(budgets) => {
            if budgets.is_empty() {
                return Err(Error::Empty { op: "sweep" });
            }
            for b in budgets {
                b.validate()?;
            }
            let trained: Vec<HashWeights> = run_seeds
                .par_iter()
                .map(|&seed| train_workload_head(cfg, cfg.rbit, seed).map(|(w, _)| w))
                .collect::<Result<_>>()?;
            let mut rows = Vec::with_capacity(budgets.len() * run_seeds.len());
            for budget in budgets {
                let batch: Vec<SweepRow> = run_seeds
                    .par_iter()
                    .zip(&trained)
                    .map(|(&seed, weights)| {
                        let report = eval_recall(cfg, weights, *budget, seed)?;
                        Ok(SweepRow {
                            axis: "budget",
                            value: budget_value(*budget),
                            seed,
                            report,
                        })
                    })
                    .collect::<Result<_>>()?;
                rows.extend(batch);
            }
            Ok(rows)
        }
        SweepAxis::Rbit(rbits) => {
            if rbits.is_empty() {
                return Err(Error::Empty { op: "sweep" });
            }
            let cells: Vec<(usize, u64)> = rbits
                .iter()
                .flat_map(|&r| run_seeds.iter().map(move |&s| (r, s)))
                .collect();
            cells
                .par_iter()
                .map(|&(rbit, seed)| {
                    let (weights, _) = train_workload_head(cfg, rbit, seed)?;
                    let report =
                        eval_recall(cfg, &weights, Budget::Absolute(cfg.k), seed)?;
                    Ok(SweepRow { axis: "rbit", value: rbit.to_string(), seed, report })
                })
                .collect()
        }
    }
}

/// CSV value column: fractions print as raw fractions, absolutes as integers.
fn budget_value(b: Budget) -> String {
    match b {
        Budget::Absolute(n) => n.to_string(),
        Budget::Fraction(f) => format!("{}", f),
    }
}

pub const SWEEP_CSV_HEADER: &str = "axis,value,seed,k,n,recall,linf,cosine";

/// Renders sweep rows as CSV with a fixed header and six-decimal metrics.
pub fn render_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6}\n",
            row.axis,
            row.value,
            row.seed,
            row.report.k,
            row.report.n,
            row.report.recall,
            row.report.linf,
            row.report.cosine
        ));
    }
    out
}

pub fn write_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    std::fs::write(path, render_csv(rows)).map_err(|e| Error::io(path, e))
}

/// Single-method throughput measurement.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchReport {
    pub method: String,
    pub keys: usize,
    pub repeats: usize,
    /// Median wall time of one full scoring pass, in nanoseconds.
    pub wall_ns_per_call: f64,
    pub keys_per_second: f64,
    pub bytes_per_key: usize,
    /// Deterministic digest of the scores, to pin the scored work.
    pub checksum: u64,
}

/// Times one query scored against `n_keys` keys, via Hamming codes and via
/// dense f32 dot products, on a single thread. Returns
/// [hamming report, dense report]; each records the median of `repeats` runs.
pub fn bench_scoring(
    n_keys: usize,
    d: usize,
    rbit: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchReport>> {
    if n_keys < 1024 {
        return Err(Error::InvalidArgument {
            op: "bench_scoring",
            detail: format!("n_keys {} too small for stable timing; need ≥ 1024", n_keys),
        });
    }
    if d == 0 || repeats == 0 {
        return Err(Error::InvalidArgument {
            op: "bench_scoring",
            detail: "d and repeats must be ≥ 1".into(),
        });
    }
    let words_per_row = rbit.div_euclid(32);
    if rbit == 0 || !rbit.is_multiple_of(32) {
        return Err(Error::InvalidArgument {
            op: "bench_scoring",
            detail: format!("rbit {} must be a positive multiple of 32", rbit),
        });
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seeds::derive(seed, "bench"));
    let code_words: Vec<u32> = (0..n_keys * words_per_row).map(|_| rng.random()).collect();
    let codes = PackedCodes::from_words(n_keys, rbit, code_words)?;
    let q_code: Vec<u32> = (0..words_per_row).map(|_| rng.random()).collect();
    let mut keys = Matrix::zeros(n_keys, d);
    for v in keys.data_mut() {
        *v = rng.random::<f32>() - 0.5;
    }
    let query: Vec<f32> = (0..d).map(|_| rng.random::<f32>() - 0.5).collect();

    let mut hamming_times = Vec::with_capacity(repeats);
    let mut hamming_checksum = 0u64;
    for _ in 0..repeats {
        let start = Instant::now();
        let scores = score_cache(&q_code, &codes)?;
        hamming_times.push(start.elapsed());
        let scores = std::hint::black_box(scores);
        hamming_checksum = scores.values().iter().map(|&s| u64::from(s)).sum();
    }

    let mut dense_times = Vec::with_capacity(repeats);
    let mut dense_checksum = 0u64;
    for _ in 0..repeats {
        let start = Instant::now();
        let scores = dense_scores(&query, &keys);
        dense_times.push(start.elapsed());
        let scores = std::hint::black_box(scores);
        dense_checksum = scores.iter().map(|&s| f64::from(s)).sum::<f64>().to_bits();
    }

    let report = |method: String, times: &mut Vec<Duration>, bytes: usize, checksum: u64| {
        times.sort_unstable();
        let median = times[times.len() / 2].as_secs_f64().max(1e-12);
        BenchReport {
            method,
            keys: n_keys,
            repeats,
            wall_ns_per_call: median * 1e9,
            keys_per_second: n_keys as f64 / median,
            bytes_per_key: bytes,
            checksum,
        }
    };
    Ok(vec![
        report(format!("hamming-{}bit", rbit), &mut hamming_times, rbit / 8, hamming_checksum),
        report(format!("dense-dot-d{}", d), &mut dense_times, 4 * d, dense_checksum),
    ])
}

/// The dense scoring baseline: one f32 dot product per cached key.
fn dense_scores(query: &[f32], keys: &Matrix) -> Vec<f32> {
    (0..keys.rows())
        .map(|i| query.iter().zip(keys.row(i)).map(|(a, b)| a * b).sum())
        .collect()
}

/// Ratio of prefill encoding work to attention work at sequence length `s`:
/// encoding costs s·d·rbit multiply-accumulates while causal attention costs
/// s²·d (scores) + s² (softmax/reduction) — so the overhead is
/// d·rbit / (s·(d+1)) and shrinks as contexts grow.
pub fn prefill_overhead_accounting(s: usize, d: usize, rbit: usize) -> Result<f64> {
    if s == 0 || d == 0 || rbit == 0 {
        return Err(Error::InvalidArgument {
            op: "prefill_overhead_accounting",
            detail: "s, d, and rbit must all be ≥ 1".into(),
        });
    }
    let (s, d, rbit) = (s as f64, d as f64, rbit as f64);
    Ok((s * d * rbit) / (s * s * d + s * s))
}
