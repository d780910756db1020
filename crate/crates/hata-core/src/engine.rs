//! KV-cache engine: prefill and decode across layers and heads.
//!
//! Each (layer, kv-head) owns three parallel append-only caches — keys,
//! values, and packed key codes — that stay length-aligned at every operation
//! boundary. Decode appends the incoming token first (so the newest token is
//! always scoreable), scores the code cache in Hamming space, aggregates
//! scores across the query heads of a GQA group, and runs sparse attention
//! over one shared selected set.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attention::{full_attention, sparse_attention};
use crate::codec::{encode_row, hash_encode, PackedCodes};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scorer::{aggregate_gqa, score_cache, topk_select, ScoreVector};
use crate::trainer::HashWeights;

/// Token budget: keep N tokens, or a fraction of the current cache length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Budget {
    Absolute(usize),
    Fraction(f64),
}

impl Budget {
    /// Number of tokens to keep at the given cache length: absolute budgets
    /// clamp to [1, length]; fractional budgets round half-up and keep at
    /// least one token.
    pub fn resolve(&self, length: usize) -> usize {
        match *self {
            Budget::Absolute(n) => n.clamp(1, length),
            Budget::Fraction(f) => {
                let n = (f * length as f64 + 0.5).floor() as usize;
                n.clamp(1, length)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Budget::Absolute(n) if n >= 1 => Ok(()),
            Budget::Absolute(n) => Err(Error::InvalidArgument {
                op: "Budget",
                detail: format!("absolute budget {} must be ≥ 1", n),
            }),
            Budget::Fraction(f) if f > 0.0 && f <= 1.0 => Ok(()),
            Budget::Fraction(f) => Err(Error::InvalidArgument {
                op: "Budget",
                detail: format!("fractional budget {} must lie in (0, 1]", f),
            }),
        }
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Absolute(n) => write!(f, "{}", n),
            Budget::Fraction(x) => {
                // Print a clean percentage (1.56%, not 1.5599999999999998%).
                let pct = format!("{:.10}", x * 100.0);
                write!(f, "{}%", pct.trim_end_matches('0').trim_end_matches('.'))
            }
        }
    }
}

/// Parses `N` (absolute) or `P%` (percentage, e.g. `1.56%`).
impl FromStr for Budget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Budget> {
        let bad = |detail: String| Error::InvalidArgument { op: "Budget::from_str", detail };
        let budget = if let Some(pct) = s.strip_suffix('%') {
            let p: f64 = pct
                .trim()
                .parse()
                .map_err(|_| bad(format!("cannot parse percentage {:?}", s)))?;
            Budget::Fraction(p / 100.0)
        } else {
            let n: usize =
                s.trim().parse().map_err(|_| bad(format!("cannot parse budget {:?}", s)))?;
            Budget::Absolute(n)
        };
        budget.validate()?;
        Ok(budget)
    }
}

impl serde::Serialize for Budget {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Budget::Absolute(n) => s.serialize_u64(n as u64),
            Budget::Fraction(f) => s.serialize_f64(f),
        }
    }
}

impl<'de> serde::Deserialize<'de> for Budget {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(u64),
            Float(f64),
            Text(String),
        }
        let budget = match Repr::deserialize(d)? {
            Repr::Int(n) => Budget::Absolute(n as usize),
            Repr::Float(f) => Budget::Fraction(f),
            Repr::Text(s) => Budget::from_str(&s).map_err(serde::de::Error::custom)?,
        };
        budget.validate().map_err(serde::de::Error::custom)?;
        Ok(budget)
    }
}

/// Runtime policy for the engine.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    /// Hash bits per code; must be a positive multiple of 32.
    pub rbit: usize,
    pub budget: Budget,
    /// Layers that run dense attention on decode (codes are still cached).
    pub dense_layers: BTreeSet<usize>,
    /// Query heads sharing one KV head.
    pub heads_per_kv_group: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            rbit: 128,
            budget: Budget::Fraction(0.0156),
            dense_layers: BTreeSet::from([0, 1]),
            heads_per_kv_group: 1,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rbit == 0 || !self.rbit.is_multiple_of(32) {
            return Err(Error::InvalidArgument {
                op: "EngineConfig",
                detail: format!("rbit {} must be a positive multiple of 32", self.rbit),
            });
        }
        if self.heads_per_kv_group == 0 {
            return Err(Error::InvalidArgument {
                op: "EngineConfig",
                detail: "heads_per_kv_group must be ≥ 1".into(),
            });
        }
        self.budget.validate()
    }
}

/// Number of tokens to keep at the given cache length; see [`Budget::resolve`].
pub fn resolve_budget(cfg: &EngineConfig, length: usize) -> usize {
    cfg.budget.resolve(length)
}

/// Key/value/code caches for one (layer, kv-head).
#[derive(Clone, Debug, PartialEq)]
pub struct KVCacheState {
    keys: Matrix,
    values: Matrix,
    codes: PackedCodes,
}

impl KVCacheState {
    pub fn new(d: usize, rbit: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument { op: "KVCacheState", detail: "d must be ≥ 1".into() });
        }
        Ok(KVCacheState {
            keys: Matrix::zeros(0, d),
            values: Matrix::zeros(0, d),
            codes: PackedCodes::new(rbit)?,
        })
    }

    pub fn len(&self) -> usize {
        self.keys.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d(&self) -> usize {
        self.keys.cols()
    }

    pub fn rbit(&self) -> usize {
        self.codes.rbit()
    }

    pub fn keys(&self) -> &Matrix {
        &self.keys
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn codes(&self) -> &PackedCodes {
        &self.codes
    }

    /// Appends one token to all three caches; the code is derived from the
    /// key on the spot, so code-cache consistency holds by construction.
    fn append(&mut self, k: &[f32], v: &[f32], weights: &HashWeights) -> Result<()> {
        if k.len() != self.d() {
            return Err(Error::Dimension {
                op: "KVCacheState::append",
                detail: format!("key cache holds {}-dim rows, got {}", self.d(), k.len()),
            });
        }
        if v.len() != self.d() {
            return Err(Error::Dimension {
                op: "KVCacheState::append",
                detail: format!("value cache holds {}-dim rows, got {}", self.d(), v.len()),
            });
        }
        if weights.d() != self.d() || weights.r() != self.rbit() {
            return Err(Error::Dimension {
                op: "KVCacheState::append",
                detail: format!(
                    "code cache is {} bits over {} dims, weights are {}x{}",
                    self.rbit(),
                    self.d(),
                    weights.d(),
                    weights.r()
                ),
            });
        }
        let code = encode_row(k, weights)?;
        self.keys.push_row(k)?;
        self.values.push_row(v)?;
        self.codes.push_row(&code)?;
        Ok(())
    }

    /// Recomputes every cached code from the key cache and compares; the
    /// integrity check used by tests and snapshot loading.
    pub fn verify_code_consistency(&self, weights: &HashWeights) -> Result<()> {
        let expect = hash_encode(&self.keys, weights)?;
        if expect != self.codes {
            return Err(Error::State("code cache does not match hash of key cache".into()));
        }
        Ok(())
    }
}

/// Output of one decode step for a GQA group: one attention output row per
/// query head, plus the shared selected indices.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOutput {
    pub outputs: Matrix,
    pub selected: Vec<usize>,
}

/// Dense prefill for one head: fills the caches with K/V/codes and returns
/// causal full attention (row t attends to keys 0..=t).
pub fn prefill(
    state: &mut KVCacheState,
    queries: &Matrix,
    keys: &Matrix,
    values: &Matrix,
    weights: &HashWeights,
) -> Result<Matrix> {
    if !state.is_empty() {
        return Err(Error::State(format!(
            "prefill requires an empty cache, found {} cached tokens",
            state.len()
        )));
    }
    let n = keys.rows();
    if n == 0 {
        return Err(Error::Empty { op: "prefill" });
    }
    if queries.rows() != n || values.rows() != n {
        return Err(Error::Dimension {
            op: "prefill",
            detail: format!(
                "queries {}, keys {}, values {} rows must match",
                queries.rows(),
                n,
                values.rows()
            ),
        });
    }
    let all: Vec<usize> = (0..n).collect();
    let mut out = Matrix::zeros(0, state.d());
    for t in 0..n {
        state.append(keys.row(t), values.row(t), weights)?;
        out.push_row(&sparse_attention(queries.row(t), &state.keys, &state.values, &all[..=t])?)?;
    }
    Ok(out)
}

/// One sparse decode step for a GQA group sharing this cache.
///
/// `queries` has one row per query head. The step appends k/v/code first,
/// then encodes each query, sums the per-head Hamming scores, selects
/// `resolve_budget` indices once for the whole group, and runs gather-fused
/// sparse attention per head over that shared set.
pub fn decode_step(
    state: &mut KVCacheState,
    queries: &Matrix,
    k: &[f32],
    v: &[f32],
    weights: &HashWeights,
    cfg: &EngineConfig,
) -> Result<DecodeOutput> {
    cfg.validate()?;
    state.append(k, v, weights)?;
    let per_head: Vec<ScoreVector> = (0..queries.rows())
        .map(|h| {
            let q_code = encode_row(queries.row(h), weights)?;
            score_cache(&q_code, &state.codes)
        })
        .collect::<Result<_>>()?;
    let combined = aggregate_gqa(&per_head)?;
    let budget = resolve_budget(cfg, state.len());
    let selected = topk_select(&combined, budget);
    let mut outputs = Matrix::zeros(0, state.d());
    for h in 0..queries.rows() {
        outputs.push_row(&sparse_attention(queries.row(h), &state.keys, &state.values, &selected)?)?;
    }
    Ok(DecodeOutput { outputs, selected })
}

/// One dense decode step: same cache update (including the code), full
/// attention over the whole cache for every query head.
pub fn decode_dense(
    state: &mut KVCacheState,
    queries: &Matrix,
    k: &[f32],
    v: &[f32],
    weights: &HashWeights,
) -> Result<DecodeOutput> {
    state.append(k, v, weights)?;
    let mut outputs = Matrix::zeros(0, state.d());
    for h in 0..queries.rows() {
        outputs.push_row(&full_attention(queries.row(h), &state.keys, &state.values)?)?;
    }
    Ok(DecodeOutput { outputs, selected: (0..state.len()).collect() })
}

/// Per-KV-head inputs for one decode step.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadStep {
    /// One row per query head in the group.
    pub queries: Matrix,
    pub key: Vec<f32>,
    pub value: Vec<f32>,
}

/// Multi-layer, multi-head engine state with a per-layer dense/sparse policy.
#[derive(Debug)]
pub struct Engine {
    cfg: EngineConfig,
    weights: BTreeMap<(usize, usize), HashWeights>,
    states: BTreeMap<(usize, usize), KVCacheState>,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Engine { cfg, weights: BTreeMap::new(), states: BTreeMap::new() })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    /// Registers hash weights for (layer, kv-head) and opens its caches.
    pub fn add_head(&mut self, weights: HashWeights) -> Result<()> {
        if weights.r() != self.cfg.rbit {
            return Err(Error::Dimension {
                op: "Engine::add_head",
                detail: format!("engine is configured for rbit {}, weights have {}", self.cfg.rbit, weights.r()),
            });
        }
        let key = (weights.layer, weights.head);
        if self.states.contains_key(&key) {
            return Err(Error::State(format!(
                "head (layer {}, head {}) already registered",
                key.0, key.1
            )));
        }
        self.states.insert(key, KVCacheState::new(weights.d(), weights.r())?);
        self.weights.insert(key, weights);
        Ok(())
    }

    pub fn heads(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.states.keys().copied()
    }

    pub fn state(&self, layer: usize, kv_head: usize) -> Option<&KVCacheState> {
        self.states.get(&(layer, kv_head))
    }

    pub fn weights_for(&self, layer: usize, kv_head: usize) -> Option<&HashWeights> {
        self.weights.get(&(layer, kv_head))
    }

    fn head_mut(&mut self, layer: usize, kv_head: usize) -> Result<(&mut KVCacheState, &HashWeights)> {
        let w = self.weights.get(&(layer, kv_head)).ok_or_else(|| {
            Error::State(format!("no weights registered for (layer {}, head {})", layer, kv_head))
        })?;
        let s = self.states.get_mut(&(layer, kv_head)).expect("state exists with weights");
        Ok((s, w))
    }

    /// GQA prefill: fills the shared caches once and returns causal dense
    /// attention outputs, one matrix per query head.
    pub fn prefill_head(
        &mut self,
        layer: usize,
        kv_head: usize,
        queries: &[Matrix],
        keys: &Matrix,
        values: &Matrix,
    ) -> Result<Vec<Matrix>> {
        if queries.len() != self.cfg.heads_per_kv_group {
            return Err(Error::Dimension {
                op: "Engine::prefill_head",
                detail: format!(
                    "expected {} query heads, got {}",
                    self.cfg.heads_per_kv_group,
                    queries.len()
                ),
            });
        }
        let (state, weights) = self.head_mut(layer, kv_head)?;
        if !state.is_empty() {
            return Err(Error::State(format!(
                "prefill requires an empty cache, found {} cached tokens",
                state.len()
            )));
        }
        let n = keys.rows();
        if n == 0 {
            return Err(Error::Empty { op: "Engine::prefill_head" });
        }
        for t in 0..n {
            state.append(keys.row(t), values.row(t), weights)?;
        }
        let all: Vec<usize> = (0..n).collect();
        let mut outs = Vec::with_capacity(queries.len());
        for q in queries {
            if q.rows() != n {
                return Err(Error::Dimension {
                    op: "Engine::prefill_head",
                    detail: format!("query matrix has {} rows, expected {}", q.rows(), n),
                });
            }
            let mut out = Matrix::zeros(0, state.d());
            for t in 0..n {
                out.push_row(&sparse_attention(q.row(t), &state.keys, &state.values, &all[..=t])?)?;
            }
            outs.push(out);
        }
        Ok(outs)
    }

    /// Runs one decode step for every given (kv-head, inputs) pair of a
    /// layer. Dense-policy layers take the full-attention path; the caches
    /// (including codes) update identically either way.
    pub fn decode_layer(
        &mut self,
        layer: usize,
        steps: &[(usize, HeadStep)],
    ) -> Result<Vec<(usize, DecodeOutput)>> {
        let dense = self.cfg.dense_layers.contains(&layer);
        let cfg = self.cfg.clone();
        let mut outs = Vec::with_capacity(steps.len());
        for (kv_head, step) in steps {
            if step.queries.rows() != cfg.heads_per_kv_group {
                return Err(Error::Dimension {
                    op: "Engine::decode_layer",
                    detail: format!(
                        "expected {} query heads, got {}",
                        cfg.heads_per_kv_group,
                        step.queries.rows()
                    ),
                });
            }
            let (state, weights) = self.head_mut(layer, *kv_head)?;
            let out = if dense {
                decode_dense(state, &step.queries, &step.key, &step.value, weights)?
            } else {
                decode_step(state, &step.queries, &step.key, &step.value, weights, &cfg)?
            };
            outs.push((*kv_head, out));
        }
        Ok(outs)
    }

    /// Writes the engine state as a directory of tensor files plus a JSON
    /// manifest, creating the directory if needed. Every head must hold at
    /// least one token.
    pub fn save_snapshot(&self, dir: &Path) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::State("nothing to snapshot: no heads registered".into()));
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut heads = Vec::new();
        for (&(layer, head), state) in &self.states {
            if state.is_empty() {
                return Err(Error::State(format!(
                    "cannot snapshot empty caches for (layer {}, head {})",
                    layer, head
                )));
            }
            let weights = &self.weights[&(layer, head)];
            let tag = format!("L{}_H{}", layer, head);
            let entry = SnapshotHead {
                layer,
                head,
                length: state.len(),
                d: state.d(),
                keys: format!("keys_{}.htns", tag),
                values: format!("values_{}.htns", tag),
                codes: format!("codes_{}.htns", tag),
                weights: format!("hash_{}.htns", tag),
            };
            crate::tensorio::write_matrix(&dir.join(&entry.keys), &state.keys)?;
            crate::tensorio::write_matrix(&dir.join(&entry.values), &state.values)?;
            crate::tensorio::write_codes(&dir.join(&entry.codes), &state.codes)?;
            crate::tensorio::write_matrix(&dir.join(&entry.weights), weights.matrix())?;
            heads.push(entry);
        }
        let manifest = SnapshotManifest { config: self.cfg.clone(), heads };
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Restores a snapshot, verifying cache alignment and code-cache
    /// consistency for every head.
    pub fn load_snapshot(dir: &Path) -> Result<Engine> {
        let path = dir.join("manifest.json");
        let raw = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: SnapshotManifest = serde_json::from_str(&raw).map_err(|e| Error::Format {
            path: path.clone(),
            detail: e.to_string(),
        })?;
        let mut engine = Engine::new(manifest.config)?;
        for h in &manifest.heads {
            let keys = crate::tensorio::read_matrix(&dir.join(&h.keys))?;
            let values = crate::tensorio::read_matrix(&dir.join(&h.values))?;
            let codes = crate::tensorio::read_codes(&dir.join(&h.codes))?;
            let w = crate::tensorio::read_matrix(&dir.join(&h.weights))?;
            let weights = HashWeights::new(h.layer, h.head, w)?;
            if keys.rows() != h.length || values.rows() != h.length || codes.rows() != h.length {
                return Err(Error::Corrupt {
                    path: dir.join(&h.keys),
                    detail: format!(
                        "cache lengths {}/{}/{} disagree with manifest length {}",
                        keys.rows(),
                        values.rows(),
                        codes.rows(),
                        h.length
                    ),
                });
            }
            let state = KVCacheState { keys, values, codes };
            state.verify_code_consistency(&weights)?;
            engine.states.insert((h.layer, h.head), state);
            engine.weights.insert((h.layer, h.head), weights);
        }
        Ok(engine)
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct SnapshotManifest {
    config: EngineConfig,
    heads: Vec<SnapshotHead>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct SnapshotHead {
    layer: usize,
    head: usize,
    length: usize,
    d: usize,
    keys: String,
    values: String,
    codes: String,
    weights: String,
}

/// Seeded random-walk generator of plausible q/k/v streams for end-to-end
/// tests and the `simulate` subcommand; each vector evolves as
/// x ← 0.95·x + 0.3·ε with ε standard normal.
#[derive(Clone, Debug)]
pub struct SyntheticDecoder {
    rng: ChaCha12Rng,
    q_state: Matrix,
    k_state: Vec<f32>,
    v_state: Vec<f32>,
}

impl SyntheticDecoder {
    pub fn new(d: usize, query_heads: usize, seed: u64) -> Result<Self> {
        if d == 0 || query_heads == 0 {
            return Err(Error::InvalidArgument {
                op: "SyntheticDecoder",
                detail: "d and query_heads must be ≥ 1".into(),
            });
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut q_state = Matrix::zeros(query_heads, d);
        for v in q_state.data_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let k_state: Vec<f32> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let v_state: Vec<f32> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(SyntheticDecoder { rng, q_state, k_state, v_state })
    }

    fn walk(rng: &mut ChaCha12Rng, x: &mut [f32]) {
        for v in x {
            let e: f32 = StandardNormal.sample(rng);
            *v = 0.95 * *v + 0.3 * e;
        }
    }

    /// Advances the walk one token and returns its q/k/v.
    pub fn next_step(&mut self) -> HeadStep {
        for h in 0..self.q_state.rows() {
            Self::walk(&mut self.rng, self.q_state.row_mut(h));
        }
        Self::walk(&mut self.rng, &mut self.k_state);
        Self::walk(&mut self.rng, &mut self.v_state);
        HeadStep {
            queries: self.q_state.clone(),
            key: self.k_state.clone(),
            value: self.v_state.clone(),
        }
    }

    /// Generates `len` tokens for prefill: per-query-head query matrices plus
    /// shared K and V.
    pub fn prefill_inputs(&mut self, len: usize) -> Result<(Vec<Matrix>, Matrix, Matrix)> {
        if len == 0 {
            return Err(Error::Empty { op: "SyntheticDecoder::prefill_inputs" });
        }
        let d = self.k_state.len();
        let heads = self.q_state.rows();
        let mut qs = vec![Matrix::zeros(0, d); heads];
        let mut k = Matrix::zeros(0, d);
        let mut v = Matrix::zeros(0, d);
        for _ in 0..len {
            let step = self.next_step();
            for (h, q) in qs.iter_mut().enumerate() {
                q.push_row(step.queries.row(h))?;
            }
            k.push_row(&step.key)?;
            v.push_row(&step.value)?;
        }
        Ok((qs, k, v))
    }
}
