//! Learned-hash training.
//!
//! The binary hash h(x) = sign(x·W) is relaxed during training to
//! h(x) = 2·sigmoid(σ·x·W) − 1 so the objective is differentiable. The loss
//! over a batch of triplet groups (query j, keys i, labels s) is
//!
//! ```text
//! L = ε·Σ_j Σ_i s_{j,i}·||h(q_j) − h(k_{j,i})||²     (score ordering)
//!   + η·Σ_j ||Σ_i h(k_{j,i})||²                      (bit balance)
//!   + λ·||WᵀW − I||²_F                               (column decorrelation)
//! ```
//!
//! Gradients are derived by hand (no autodiff); loss and gradient share one
//! accumulation pass. Internal arithmetic runs in f64 so the finite-difference
//! gradient check holds tightly; parameters stay f32.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{sgd_step, Matrix, SgdState};
use crate::sampling::TripletGroup;
use crate::seeds;

/// Learned projection for one attention head.
///
/// `r` is the number of hash bits per code. Bit packing (codec) additionally
/// requires `r` divisible by 32; training itself works for any `r ≥ 1`, which
/// the gradient-check harness relies on.
#[derive(Clone, Debug, PartialEq)]
pub struct HashWeights {
    pub layer: usize,
    pub head: usize,
    w: Matrix,
}

impl HashWeights {
    pub fn new(layer: usize, head: usize, w: Matrix) -> Result<Self> {
        if w.rows() == 0 || w.cols() == 0 {
            return Err(Error::InvalidArgument {
                op: "HashWeights::new",
                detail: format!("degenerate shape {}x{}", w.rows(), w.cols()),
            });
        }
        if !w.is_finite() {
            return Err(Error::Validation("hash weights contain non-finite values".into()));
        }
        Ok(HashWeights { layer, head, w })
    }

    /// Random initialization: i.i.d. Gaussian entries with std 1/√d. The
    /// untrained state doubles as the sign-random-projection baseline.
    pub fn random(layer: usize, head: usize, d: usize, r: usize, seed: u64) -> Result<Self> {
        if d == 0 || r == 0 {
            return Err(Error::InvalidArgument {
                op: "HashWeights::random",
                detail: format!("degenerate shape {}x{}", d, r),
            });
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let std = 1.0 / (d as f32).sqrt();
        let mut w = Matrix::zeros(d, r);
        for v in w.data_mut() {
            let g: f32 = StandardNormal.sample(&mut rng);
            *v = std * g;
        }
        Ok(HashWeights { layer, head, w })
    }

    pub fn d(&self) -> usize {
        self.w.rows()
    }

    pub fn r(&self) -> usize {
        self.w.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.w
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.w
    }
}

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Sigmoid sharpness σ of the relaxation, in (0, 1).
    pub sigma: f32,
    /// Weight ε of the score-ordering term.
    pub eps: f32,
    /// Weight η of the bit-balance term.
    pub eta: f32,
    /// Weight λ of the column-decorrelation term.
    pub lambda: f32,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    /// Upper bound on triplets (query–key pairs) per loaded chunk.
    pub chunk_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sigma: 0.1,
            eps: 0.01,
            eta: 2.0,
            lambda: 1.0,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-6,
            epochs: 15,
            iterations_per_epoch: 20,
            chunk_size: 32768,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::InvalidArgument {
                op: "TrainConfig",
                detail: format!("sigma {} must lie in (0, 1)", self.sigma),
            });
        }
        if self.eps < 0.0 || self.eta < 0.0 || self.lambda < 0.0 {
            return Err(Error::InvalidArgument {
                op: "TrainConfig",
                detail: "loss weights must be ≥ 0".into(),
            });
        }
        if self.epochs == 0 || self.iterations_per_epoch == 0 || self.chunk_size == 0 {
            return Err(Error::InvalidArgument {
                op: "TrainConfig",
                detail: "epochs, iterations_per_epoch and chunk_size must be ≥ 1".into(),
            });
        }
        Ok(())
    }
}

/// Loss value split into its unweighted terms; `total` applies ε/η/λ.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub similarity_term: f64,
    pub balance_term: f64,
    pub ortho_term: f64,
    pub total: f64,
}

/// Relaxed hash of a single vector: 2·sigmoid(σ·x·W) − 1, componentwise.
pub fn relaxed_hash(x: &[f32], weights: &HashWeights, sigma: f32) -> Result<Vec<f32>> {
    if x.len() != weights.d() {
        return Err(Error::Dimension {
            op: "relaxed_hash",
            detail: format!("x has {} dims, W expects {}", x.len(), weights.d()),
        });
    }
    let w64 = to_f64(weights.matrix());
    let mut z = vec![0.0f64; weights.r()];
    project(x, &w64, weights.r(), &mut z);
    Ok(z.iter().map(|&v| relax(sigma as f64 * v) as f32).collect())
}

/// Loss over a batch of groups. See the module docs for the objective.
pub fn relaxed_loss(
    weights: &HashWeights,
    groups: &[TripletGroup],
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let (loss, _) = loss_and_grad(weights, groups, cfg, false, GradMode::ReportedLoss)?;
    Ok(loss)
}

/// Analytic gradient of the total loss with respect to W, shape d×r.
pub fn relaxed_loss_grad(
    weights: &HashWeights,
    groups: &[TripletGroup],
    cfg: &TrainConfig,
) -> Result<Matrix> {
    let (_, grad) = loss_and_grad(weights, groups, cfg, true, GradMode::ReportedLoss)?;
    Ok(grad.expect("gradient requested"))
}

fn relax(y: f64) -> f64 {
    2.0 / (1.0 + (-y).exp()) - 1.0
}

/// dh/dz for h = 2·sigmoid(σz) − 1, expressed through h: σ·(1 − h²)/2.
fn relax_slope(h: f64, sigma: f64) -> f64 {
    sigma * (1.0 - h * h) / 2.0
}

fn to_f64(m: &Matrix) -> Vec<f64> {
    m.data().iter().map(|&v| v as f64).collect()
}

/// z ← x·W with W given as a row-major d×r f64 buffer.
fn project(x: &[f32], w64: &[f64], r: usize, z: &mut [f64]) {
    z.fill(0.0);
    for (a, &xa) in x.iter().enumerate() {
        if xa == 0.0 {
            continue;
        }
        let xa = xa as f64;
        let wrow = &w64[a * r..(a + 1) * r];
        for (zb, &wb) in z.iter_mut().zip(wrow) {
            *zb += xa * wb;
        }
    }
}

/// Shared forward/backward pass. The gradient of each term:
///
/// - ordering term, per group: 2·s_i·(hq − hk_i) flows into the query via
///   q ⊗ (gq ⊙ Σ_i 2·s_i·δ_i) and into each key via k_i ⊗ (−2·s_i·gk_i ⊙ δ_i),
///   where δ_i = hq − hk_i and g· = σ(1 − h²)/2 is the relaxation slope;
/// - balance term, per group: k_i ⊗ (2·gk_i ⊙ M) with M = Σ_i hk_i;
/// - decorrelation term: 4·W·(WᵀW − I).
enum GradMode {
    /// Exact gradient of the reported loss (raw sums, squared decorrelation
    /// norm). This is what the finite-difference oracle checks.
    ReportedLoss,
    /// Gradient used by SGD steps: the ordering and balance gradients are
    /// multiplied by `data_scale` (1/(triplets in batch), so steps do not
    /// grow with batch size), and the decorrelation gradient descends the
    /// unsquared norm ‖WᵀW − I‖_F — gradient 2·W·E/‖E‖ — whose magnitude
    /// stays proportional to ‖W‖ instead of ‖W‖³. Both decorrelation forms
    /// share minimizers and descent directions; the squared form is merely
    /// reported because it is smooth at zero.
    TrainingStep { data_scale: f64 },
}

/// Shared forward/backward pass; see [`GradMode`] for the two gradient
/// flavors. The reported loss is identical in both modes.
fn loss_and_grad(
    weights: &HashWeights,
    groups: &[TripletGroup],
    cfg: &TrainConfig,
    want_grad: bool,
    mode: GradMode,
) -> Result<(LossBreakdown, Option<Matrix>)> {
    cfg.validate()?;
    let d = weights.d();
    let r = weights.r();
    for (gi, g) in groups.iter().enumerate() {
        if g.dim() != d || g.keys.cols() != d {
            return Err(Error::Dimension {
                op: "relaxed_loss",
                detail: format!("group {} has dim {}, W expects {}", gi, g.dim(), d),
            });
        }
        if g.labels.len() != g.key_count() {
            return Err(Error::Dimension {
                op: "relaxed_loss",
                detail: format!(
                    "group {} has {} labels for {} keys",
                    gi,
                    g.labels.len(),
                    g.key_count()
                ),
            });
        }
    }

    let sigma = cfg.sigma as f64;
    let (eps, eta, lambda) = (cfg.eps as f64, cfg.eta as f64, cfg.lambda as f64);
    let data_scale = match mode {
        GradMode::ReportedLoss => 1.0,
        GradMode::TrainingStep { data_scale } => data_scale,
    };
    let w64 = to_f64(weights.matrix());

    let mut sim = 0.0f64;
    let mut bal = 0.0f64;
    let mut grad = if want_grad { vec![0.0f64; d * r] } else { Vec::new() };

    let mut hq = vec![0.0f64; r];
    let mut z = vec![0.0f64; r];
    let mut hk: Vec<f64> = Vec::new();
    let mut big_m = vec![0.0f64; r];
    let mut s_delta = vec![0.0f64; r];
    let mut coeff = vec![0.0f64; r];

    for g in groups {
        let m = g.key_count();
        project(&g.query, &w64, r, &mut z);
        for (h, &zb) in hq.iter_mut().zip(&z) {
            *h = relax(sigma * zb);
        }

        hk.resize(m * r, 0.0);
        big_m.fill(0.0);
        for i in 0..m {
            project(g.keys.row(i), &w64, r, &mut z);
            let hrow = &mut hk[i * r..(i + 1) * r];
            for ((h, &zb), acc) in hrow.iter_mut().zip(&z).zip(big_m.iter_mut()) {
                *h = relax(sigma * zb);
                *acc += *h;
            }
        }

        s_delta.fill(0.0);
        for i in 0..m {
            let s = g.labels[i] as f64;
            let hrow = &hk[i * r..(i + 1) * r];
            let mut sq = 0.0f64;
            for b in 0..r {
                let delta = hq[b] - hrow[b];
                sq += delta * delta;
                s_delta[b] += s * delta;
            }
            sim += s * sq;

            if want_grad {
                // Key-side coefficient: ordering + balance contributions.
                for b in 0..r {
                    let delta = hq[b] - hrow[b];
                    let gk = relax_slope(hrow[b], sigma);
                    coeff[b] = data_scale * gk * (2.0 * eta * big_m[b] - 2.0 * eps * s * delta);
                }
                outer_add(&mut grad, g.keys.row(i), &coeff, r);
            }
        }
        bal += big_m.iter().map(|&v| v * v).sum::<f64>();

        if want_grad {
            for b in 0..r {
                coeff[b] = data_scale * eps * relax_slope(hq[b], sigma) * 2.0 * s_delta[b];
            }
            outer_add(&mut grad, &g.query, &coeff, r);
        }
    }

    // Decorrelation term: E = WᵀW − I, loss ||E||²_F, gradient 4·W·E.
    let mut e = vec![0.0f64; r * r];
    for a in 0..d {
        let wrow = &w64[a * r..(a + 1) * r];
        for b in 0..r {
            let wab = wrow[b];
            if wab == 0.0 {
                continue;
            }
            let erow = &mut e[b * r..(b + 1) * r];
            for (ev, &wc) in erow.iter_mut().zip(wrow) {
                *ev += wab * wc;
            }
        }
    }
    for b in 0..r {
        e[b * r + b] -= 1.0;
    }
    let ortho: f64 = e.iter().map(|&v| v * v).sum();

    // Squared-norm gradient 4λWE, or the unsquared norm's 2λWE/‖E‖ for
    // training steps (zero at E = 0, where both penalties are minimal).
    let ortho_scale = match mode {
        GradMode::ReportedLoss => 4.0 * lambda,
        GradMode::TrainingStep { .. } => {
            let norm = ortho.sqrt();
            if norm > 0.0 {
                2.0 * lambda / norm
            } else {
                0.0
            }
        }
    };
    if want_grad && lambda != 0.0 && ortho_scale != 0.0 {
        for a in 0..d {
            let wrow = &w64[a * r..(a + 1) * r];
            let grow = &mut grad[a * r..(a + 1) * r];
            for (b, &wab) in wrow.iter().enumerate() {
                if wab == 0.0 {
                    continue;
                }
                let scale = ortho_scale * wab;
                let erow = &e[b * r..(b + 1) * r];
                for (gv, &ev) in grow.iter_mut().zip(erow) {
                    *gv += scale * ev;
                }
            }
        }
    }

    let loss = LossBreakdown {
        similarity_term: sim,
        balance_term: bal,
        ortho_term: ortho,
        total: eps * sim + eta * bal + lambda * ortho,
    };
    let grad_matrix = if want_grad {
        Some(Matrix::from_vec(d, r, grad.iter().map(|&v| v as f32).collect())?)
    } else {
        None
    };
    Ok((loss, grad_matrix))
}

fn outer_add(grad: &mut [f64], x: &[f32], coeff: &[f64], r: usize) {
    for (a, &xa) in x.iter().enumerate() {
        if xa == 0.0 {
            continue;
        }
        let xa = xa as f64;
        let grow = &mut grad[a * r..(a + 1) * r];
        for (gv, &cb) in grow.iter_mut().zip(coeff) {
            *gv += xa * cb;
        }
    }
}

/// Central-finite-difference gradient of the total loss; the oracle against
/// which `relaxed_loss_grad` is checked.
pub fn finite_difference_grad(
    weights: &HashWeights,
    groups: &[TripletGroup],
    cfg: &TrainConfig,
    step: f32,
) -> Result<Matrix> {
    let d = weights.d();
    let r = weights.r();
    let mut grad = Matrix::zeros(d, r);
    let mut probe = weights.clone();
    for a in 0..d {
        for b in 0..r {
            let orig = weights.matrix().at(a, b);
            let hi = orig + step;
            let lo = orig - step;
            probe.matrix_mut().set(a, b, hi);
            let up = relaxed_loss(&probe, groups, cfg)?.total;
            probe.matrix_mut().set(a, b, lo);
            let down = relaxed_loss(&probe, groups, cfg)?.total;
            probe.matrix_mut().set(a, b, orig);
            // Use the realized f32 step so parameter rounding cancels out.
            grad.set(a, b, ((up - down) / (hi as f64 - lo as f64)) as f32);
        }
    }
    Ok(grad)
}

/// Compares analytic and finite-difference gradients; returns the largest
/// entrywise deviation normalized by the numeric gradient's max magnitude.
pub fn gradient_check(
    weights: &HashWeights,
    groups: &[TripletGroup],
    cfg: &TrainConfig,
    step: f32,
) -> Result<f64> {
    let analytic = relaxed_loss_grad(weights, groups, cfg)?;
    let numeric = finite_difference_grad(weights, groups, cfg, step)?;
    let scale = numeric
        .data()
        .iter()
        .fold(0.0f64, |acc, &v| acc.max((v as f64).abs()))
        .max(1e-6);
    let worst = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .fold(0.0f64, |acc, (&a, &n)| acc.max((a as f64 - n as f64).abs()));
    Ok(worst / scale)
}

/// Splits groups into contiguous chunks capped at `chunk_size` triplets
/// (query–key pairs); every chunk holds at least one group.
fn chunk_ranges(groups: &[TripletGroup], chunk_size: usize) -> Vec<std::ops::Range<usize>> {
    let mut ranges = Vec::new();
    let mut start = 0;
    let mut count = 0;
    for (i, g) in groups.iter().enumerate() {
        let n = g.key_count();
        if i > start && count + n > chunk_size {
            ranges.push(start..i);
            start = i;
            count = 0;
        }
        count += n;
    }
    ranges.push(start..groups.len());
    ranges
}

/// Trains hash weights with SGD over chunked mini-batches.
///
/// Per epoch, one chunk is loaded (rotating through chunks across epochs) and
/// `iterations_per_epoch` steps each draw a seeded random half of its groups.
/// 10% of groups (seed-split) are held out; the returned history records the
/// held-out loss after every epoch. When `init` is absent, a fresh random
/// projection with 128 hash bits is drawn from the training seed.
///
/// Each step descends the mean-reduced objective: the ordering and balance
/// gradients are divided by the number of query–key pairs in the batch (so
/// the configured learning rate stays meaningful at any batch size — raw-sum
/// gradients scale with batch size and diverge), and the decorrelation
/// penalty is descended through its unsquared norm, whose gradient stays
/// proportional to ‖W‖ rather than ‖W‖³. The loss history still reports the
/// raw sums and the squared decorrelation norm.
pub fn train(
    dataset: &[TripletGroup],
    cfg: &TrainConfig,
    init: Option<HashWeights>,
) -> Result<(HashWeights, Vec<LossBreakdown>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty { op: "train" });
    }
    let d = dataset[0].dim();
    let mut weights = match init {
        Some(w) => {
            if w.d() != d {
                return Err(Error::Dimension {
                    op: "train",
                    detail: format!("init expects d={}, dataset has d={}", w.d(), d),
                });
            }
            w
        }
        None => HashWeights::random(0, 0, d, 128, seeds::derive(cfg.seed, "init"))?,
    };

    // Seed-determined held-out slice (10% of groups, rounded).
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha12Rng::seed_from_u64(seeds::derive(cfg.seed, "holdout"));
        order.shuffle(&mut rng);
    }
    let held = ((dataset.len() as f64) * 0.1).round() as usize;
    let held = held.min(dataset.len().saturating_sub(1));
    let heldout: Vec<TripletGroup> = order[..held].iter().map(|&i| dataset[i].clone()).collect();
    let pool: Vec<TripletGroup> = order[held..].iter().map(|&i| dataset[i].clone()).collect();
    // With very small datasets the held-out slice is empty; history then
    // reports the loss over the full training pool.
    let eval_slice: &[TripletGroup] = if heldout.is_empty() { &pool } else { &heldout };

    let chunks = chunk_ranges(&pool, cfg.chunk_size);
    let mut batch_rng = ChaCha12Rng::seed_from_u64(seeds::derive(cfg.seed, "batch"));
    let mut state = SgdState::new(d, weights.r(), cfg.lr, cfg.momentum, cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let chunk = &pool[chunks[epoch % chunks.len()].clone()];
        for iteration in 0..cfg.iterations_per_epoch {
            let take = chunk.len().div_ceil(2);
            let picked = rand::seq::index::sample(&mut batch_rng, chunk.len(), take);
            let batch: Vec<TripletGroup> = picked.iter().map(|i| chunk[i].clone()).collect();
            let triplets: usize = batch.iter().map(|g| g.key_count()).sum();
            let data_scale = 1.0 / triplets.max(1) as f64;
            let (loss, grad) =
                loss_and_grad(&weights, &batch, cfg, true, GradMode::TrainingStep { data_scale })?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged { epoch, iteration });
            }
            sgd_step(weights.matrix_mut(), &grad.expect("gradient requested"), &mut state)?;
        }
        history.push(relaxed_loss(&weights, eval_slice, cfg)?);
    }
    Ok((weights, history))
}

/// Trains every head independently (in parallel); results keyed by
/// (layer, head). All heads use the same config and seed, so identical
/// datasets yield identical weights.
pub fn train_all_heads(
    datasets: &BTreeMap<(usize, usize), Vec<TripletGroup>>,
    cfg: &TrainConfig,
) -> Result<BTreeMap<(usize, usize), HashWeights>> {
    if datasets.is_empty() {
        return Err(Error::Empty { op: "train_all_heads" });
    }
    let trained: Vec<((usize, usize), Result<HashWeights>)> = datasets
        .par_iter()
        .map(|(&(layer, head), groups)| {
            let res = train(groups, cfg, None).map(|(mut w, _)| {
                w.layer = layer;
                w.head = head;
                w
            });
            ((layer, head), res)
        })
        .collect();

    let mut out = BTreeMap::new();
    for ((layer, head), res) in trained {
        match res {
            Ok(w) => {
                out.insert((layer, head), w);
            }
            Err(e) => {
                return Err(Error::Head { layer, head, source: Box::new(e) });
            }
        }
    }
    Ok(out)
}

/// Checkpoint manifest written next to the per-head weight tensors.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckpointManifest {
    pub d: usize,
    pub r: usize,
    pub sigma: f32,
    pub seed: u64,
    pub heads: Vec<CheckpointHead>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckpointHead {
    pub layer: usize,
    pub head: usize,
    pub file: String,
}

/// Trained hash weights keyed by (layer, kv-head), the unit a checkpoint
/// stores and restores.
pub type HeadWeightsMap = BTreeMap<(usize, usize), HashWeights>;

/// Writes one tensor file per head (`hash_L{layer}_H{head}.htns`) plus
/// `manifest.json` recording d, r, σ and the training seed.
pub fn save_checkpoint(
    dir: &std::path::Path,
    weights: &HeadWeightsMap,
    cfg: &TrainConfig,
) -> Result<()> {
    let first = weights.values().next().ok_or(Error::Empty { op: "save_checkpoint" })?;
    let (d, r) = (first.d(), first.r());
    let mut heads = Vec::with_capacity(weights.len());
    for (&(layer, head), w) in weights {
        if w.d() != d || w.r() != r {
            return Err(Error::Dimension {
                op: "save_checkpoint",
                detail: format!(
                    "head ({}, {}) is {}x{}, checkpoint is {}x{}",
                    layer,
                    head,
                    w.d(),
                    w.r(),
                    d,
                    r
                ),
            });
        }
        let file = format!("hash_L{}_H{}.htns", layer, head);
        crate::tensorio::write_matrix(&dir.join(&file), w.matrix())?;
        heads.push(CheckpointHead { layer, head, file });
    }
    let manifest = CheckpointManifest { d, r, sigma: cfg.sigma, seed: cfg.seed, heads };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &std::path::Path) -> Result<(HeadWeightsMap, CheckpointManifest)> {
    let path = dir.join("manifest.json");
    let raw = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&raw).map_err(|e| Error::Format {
        path: path.clone(),
        detail: e.to_string(),
    })?;
    let mut out = BTreeMap::new();
    for h in &manifest.heads {
        let m = crate::tensorio::read_matrix(&dir.join(&h.file))?;
        if m.rows() != manifest.d || m.cols() != manifest.r {
            return Err(Error::Corrupt {
                path: dir.join(&h.file),
                detail: format!(
                    "tensor is {}x{}, manifest says {}x{}",
                    m.rows(),
                    m.cols(),
                    manifest.d,
                    manifest.r
                ),
            });
        }
        out.insert((h.layer, h.head), HashWeights::new(h.layer, h.head, m)?);
    }
    Ok((out, manifest))
}
