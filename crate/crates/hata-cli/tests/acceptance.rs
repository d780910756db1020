//! Acceptance gate: one test per criterion, each printing a single
//! `criterion N (...): pass|fail` line (visible under `--nocapture`).
//!
//! The quality criteria (4, 5, 6, 9) share one set of training runs — five
//! seeds at each hash width on the default synthetic workload — built lazily
//! in a process-wide fixture. Thresholds were frozen from calibration runs of
//! the same workload: at rbit=128 the trained-minus-random mean recall@64 gap
//! measured +0.109 (per-seed minimum +0.083), so the gate requires ≥ 0.05.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use hata_core::engine::{decode_dense, decode_step};
use hata_core::eval::{
    bench_scoring, eval_recall, prefill_overhead_accounting, random_workload_head,
    train_workload_head, workload_dataset,
};
use hata_core::scorer::hamming;
use hata_core::tensorio;
use hata_core::trainer::{gradient_check, relaxed_loss};
use hata_core::{
    Budget, EngineConfig, HashWeights, KVCacheState, Matrix, PackedCodes, SyntheticDecoder,
    TrainConfig, TripletGroup, WorkloadConfig,
};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const RBITS: [usize; 3] = [32, 64, 128];
const BUDGETS: [f64; 5] = [0.0156, 0.0313, 0.0625, 0.125, 1.0];
/// Frozen from calibration: measured mean gap +0.109, minimum seed +0.083.
const RECALL_GAP_THRESHOLD: f64 = 0.05;

fn report(number: usize, name: &str, ok: bool, detail: &str) {
    println!("criterion {} ({}): {} — {}", number, name, if ok { "pass" } else { "fail" }, detail);
    assert!(ok, "criterion {} ({}) failed: {}", number, name, detail);
}

/// The workload every quality criterion runs on: library defaults with the
/// training chunk size matched to the dataset scale.
fn workload() -> WorkloadConfig {
    WorkloadConfig {
        train: TrainConfig { chunk_size: 4096, ..TrainConfig::default() },
        ..WorkloadConfig::default()
    }
}

struct SeedRun {
    seed: u64,
    /// Mean recall@k of the trained weights, indexed like `RBITS`.
    trained_recall: [f64; 3],
    /// Mean recall@k of the untrained random projection at rbit = 128.
    random_recall_128: f64,
    /// Worst attention-output L∞ error at rbit = 128, indexed like `BUDGETS`.
    budget_linf: [f64; 5],
    /// Bit-balance raw sum over the full training dataset, init → trained.
    balance: (f64, f64),
    /// Column-decorrelation raw term over the same dataset, init → trained.
    ortho: (f64, f64),
}

fn fixture() -> &'static Vec<SeedRun> {
    static FIXTURE: OnceLock<Vec<SeedRun>> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let w = workload();
        SEEDS
            .iter()
            .map(|&seed| {
                let mut trained_recall = [0.0; 3];
                let mut budget_linf = [0.0; 5];
                let mut balance = (0.0, 0.0);
                let mut ortho = (0.0, 0.0);
                let mut random_recall_128 = 0.0;
                for (ri, &rbit) in RBITS.iter().enumerate() {
                    let (tw, _) = train_workload_head(&w, rbit, seed).expect("training converges");
                    trained_recall[ri] =
                        eval_recall(&w, &tw, Budget::Absolute(w.k), seed).expect("eval").recall;
                    if rbit == 128 {
                        let rw = random_workload_head(&w, rbit, seed).expect("init");
                        random_recall_128 =
                            eval_recall(&w, &rw, Budget::Absolute(w.k), seed).expect("eval").recall;
                        for (bi, &frac) in BUDGETS.iter().enumerate() {
                            budget_linf[bi] = eval_recall(&w, &tw, Budget::Fraction(frac), seed)
                                .expect("eval")
                                .linf;
                        }
                        let dataset = workload_dataset(&w, seed).expect("dataset");
                        let init = random_workload_head(&w, rbit, seed).expect("init");
                        let at_init = relaxed_loss(&init, &dataset, &w.train).expect("loss");
                        let at_end = relaxed_loss(&tw, &dataset, &w.train).expect("loss");
                        balance = (at_init.balance_term, at_end.balance_term);
                        ortho = (at_init.ortho_term, at_end.ortho_term);
                    }
                }
                SeedRun { seed, trained_recall, random_recall_128, budget_linf, balance, ortho }
            })
            .collect()
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Criterion 1: the analytic gradient of the training loss matches central
/// finite differences (step 1e−3) within 1e−4 max relative error on 20
/// random instances of 3 groups × 5 keys at d=8, r=16.
#[test]
fn criterion_1_gradient_correctness() {
    let cfg = TrainConfig::default();
    let mut worst = 0.0f64;
    for instance in 0..20u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(9000 + instance);
        let weights = HashWeights::random(0, 0, 8, 16, rng.random()).expect("init");
        let groups: Vec<TripletGroup> = (0..3).map(|_| random_group(8, 5, &mut rng)).collect();
        let err = gradient_check(&weights, &groups, &cfg, 1e-3).expect("gradient check");
        worst = worst.max(err);
    }
    report(
        1,
        "gradient correctness",
        worst < 1e-4,
        &format!("max relative error {:.3e} over 20 instances (tolerance 1e-4)", worst),
    );
}

fn random_group(d: usize, keys: usize, rng: &mut ChaCha12Rng) -> TripletGroup {
    let mut mat = Matrix::zeros(keys, d);
    for v in mat.data_mut() {
        *v = StandardNormal.sample(rng);
    }
    let mut query = vec![0.0f32; d];
    for v in &mut query {
        *v = StandardNormal.sample(rng);
    }
    // A mix of ranked positives and −1 negatives, like sampled triplets.
    let labels: Vec<f32> =
        (0..keys).map(|i| if i % 3 == 0 { rng.random_range(1.0..20.0) } else { -1.0 }).collect();
    TripletGroup { query, keys: mat, labels, sequence_id: 0, query_index: keys - 1 }
}

/// Criterion 2: word-level XOR+popcount Hamming distances equal a per-bit
/// oracle exactly on 1000 random code pairs for every supported width.
#[test]
fn criterion_2_scoring_oracle_equivalence() {
    let mut rng = ChaCha12Rng::seed_from_u64(77);
    let mut checked = 0usize;
    for &rbit in &[32usize, 64, 128, 256] {
        let words = rbit / 32;
        for _ in 0..1000 {
            let a: Vec<u32> = (0..words).map(|_| rng.random()).collect();
            let b: Vec<u32> = (0..words).map(|_| rng.random()).collect();
            let fast = hamming(&a, &b).expect("hamming");
            let naive: u32 = a
                .iter()
                .zip(&b)
                .map(|(&x, &y)| (0..32).map(|bit| ((x >> bit) ^ (y >> bit)) & 1).sum::<u32>())
                .sum();
            assert_eq!(fast, naive, "rbit {}: fast {} vs naive {}", rbit, fast, naive);
            checked += 1;
        }
    }
    report(
        2,
        "scoring oracle equivalence",
        checked == 4000,
        &format!("{} random pairs matched the per-bit oracle exactly", checked),
    );
}

/// Criterion 3: a decode step whose budget covers the whole cache reproduces
/// dense attention within 1e−5 L∞ over 100 random decode histories at d=64.
#[test]
fn criterion_3_full_budget_exactness() {
    let d = 64;
    let cfg = EngineConfig {
        rbit: 64,
        budget: Budget::Fraction(1.0),
        dense_layers: Default::default(),
        heads_per_kv_group: 1,
    };
    let mut worst = 0.0f64;
    for history in 0..100u64 {
        let steps = 1 + (history as usize * 37) % 256;
        let weights = HashWeights::random(0, 0, d, cfg.rbit, 4000 + history).expect("init");
        let mut driver = SyntheticDecoder::new(d, 1, 5000 + history).expect("driver");
        let mut sparse = KVCacheState::new(d, cfg.rbit).expect("state");
        let mut dense = KVCacheState::new(d, cfg.rbit).expect("state");
        for _ in 0..steps {
            let step = driver.next_step();
            let a = decode_step(&mut sparse, &step.queries, &step.key, &step.value, &weights, &cfg)
                .expect("decode");
            let b = decode_dense(&mut dense, &step.queries, &step.key, &step.value, &weights)
                .expect("decode");
            for (x, y) in a.outputs.data().iter().zip(b.outputs.data()) {
                worst = worst.max((f64::from(*x) - f64::from(*y)).abs());
            }
        }
    }
    report(
        3,
        "full-budget exactness",
        worst <= 1e-5,
        &format!("worst L∞ gap vs dense attention {:.3e} over 100 histories (tolerance 1e-5)", worst),
    );
}

/// Criterion 4: on the default synthetic workload (4096-key cache, d=128,
/// rbit=128), mean recall@64 of trained hashes beats the untrained
/// random-projection baseline by the frozen calibration gap over 5 seeds.
#[test]
fn criterion_4_training_efficacy() {
    let runs = fixture();
    let trained = mean(runs.iter().map(|r| r.trained_recall[2]));
    let random = mean(runs.iter().map(|r| r.random_recall_128));
    let gap = trained - random;
    report(
        4,
        "training efficacy",
        trained > random && gap >= RECALL_GAP_THRESHOLD,
        &format!(
            "mean recall@64 trained {:.4} vs random {:.4} over {} seeds (gap {:+.4}, frozen threshold {:+.2})",
            trained,
            random,
            SEEDS.len(),
            gap,
            RECALL_GAP_THRESHOLD
        ),
    );
}

/// Criterion 5: mean recall@64 is non-decreasing in the hash width across
/// rbit ∈ {32, 64, 128} over 5 seeds.
#[test]
fn criterion_5_rbit_monotonicity() {
    let runs = fixture();
    let means: Vec<f64> =
        (0..RBITS.len()).map(|ri| mean(runs.iter().map(|r| r.trained_recall[ri]))).collect();
    let ok = means.windows(2).all(|w| w[1] >= w[0]);
    report(
        5,
        "hash-width monotonicity",
        ok,
        &format!(
            "mean recall@64 at rbit {:?} = [{:.4}, {:.4}, {:.4}]",
            RBITS, means[0], means[1], means[2]
        ),
    );
}

/// Criterion 6: the mean attention-output L∞ error vs dense attention is
/// non-increasing across budgets {1.56%, 3.13%, 6.25%, 12.5%, 100%} and is
/// ≤ 1e−5 at the full budget.
#[test]
fn criterion_6_budget_monotonicity() {
    let runs = fixture();
    let means: Vec<f64> =
        (0..BUDGETS.len()).map(|bi| mean(runs.iter().map(|r| r.budget_linf[bi]))).collect();
    let monotone = means.windows(2).all(|w| w[1] <= w[0]);
    let exact_at_full = *means.last().expect("budgets") <= 1e-5;
    report(
        6,
        "budget monotonicity",
        monotone && exact_at_full,
        &format!(
            "mean L∞ across budgets {:?} = {:?} (full budget ≤ 1e-5: {})",
            BUDGETS,
            means.iter().map(|v| format!("{:.3e}", v)).collect::<Vec<_>>(),
            exact_at_full
        ),
    );
}

/// Criterion 7: single-thread Hamming scoring at rbit=128 over 2^20 keys
/// reaches at least 4× the keys/second of real32 dot-product scoring at
/// d=128, and the per-key memory traffic is 16 vs 512 bytes.
#[test]
fn criterion_7_kernel_speedup_proxy() {
    let reports = bench_scoring(1 << 20, 128, 128, 5, 99).expect("bench");
    let hamming_rate = reports[0].keys_per_second;
    let dense_rate = reports[1].keys_per_second;
    let ratio = hamming_rate / dense_rate;
    let traffic_ok = reports[0].bytes_per_key == 16 && reports[1].bytes_per_key == 512;
    report(
        7,
        "kernel speedup proxy",
        ratio >= 4.0 && traffic_ok,
        &format!(
            "hamming {:.3e} keys/s vs dense {:.3e} keys/s ({:.1}×, need ≥ 4×); traffic {} vs {} bytes/key",
            hamming_rate, dense_rate, ratio, reports[0].bytes_per_key, reports[1].bytes_per_key
        ),
    );
}

/// Criterion 8: encoding work during prefill, (s·d·rbit)/(s²·d + s²), stays
/// under 1% of attention work at s=32768, d=128, rbit=128.
#[test]
fn criterion_8_prefill_overhead_accounting() {
    let ratio = prefill_overhead_accounting(32768, 128, 128).expect("accounting");
    report(
        8,
        "prefill overhead accounting",
        ratio < 0.01,
        &format!("encode/attention ops ratio {:.6} (bound 0.01)", ratio),
    );
}

/// Criterion 9: training with default hyperparameters leaves both
/// regularizers — bit balance and column decorrelation — at or below their
/// initialization values on the full training dataset, for every seed.
#[test]
fn criterion_9_regularizer_efficacy() {
    let runs = fixture();
    let mut ok = true;
    let mut lines = Vec::new();
    for r in runs {
        let bal_ok = r.balance.1 <= r.balance.0;
        let ortho_ok = r.ortho.1 <= r.ortho.0;
        ok &= bal_ok && ortho_ok;
        lines.push(format!(
            "seed {}: balance {:.0}→{:.0}, decorrelation {:.1}→{:.1}",
            r.seed, r.balance.0, r.balance.1, r.ortho.0, r.ortho.1
        ));
    }
    report(9, "regularizer efficacy", ok, &lines.join("; "));
}

/// Criterion 10: every CLI subcommand is bit-reproducible under a fixed seed
/// (bench modulo wall-clock fields), and tensor/triplet files roundtrip
/// bit-exactly.
#[test]
fn criterion_10_determinism_and_io() {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg_path = write_small_cli_config(dir.path());
    let mut detail = Vec::new();

    for sub in ["gen-data", "train", "encode", "simulate", "eval"] {
        let out_a = dir.path().join(format!("{}-a", sub));
        let out_b = dir.path().join(format!("{}-b", sub));
        for out in [&out_a, &out_b] {
            run_cli(&[sub, "--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        }
        let identical = artifact_bytes(&out_a) == artifact_bytes(&out_b);
        assert!(identical, "{} artifacts differ between identical runs", sub);
        detail.push(format!("{} bit-identical", sub));
    }

    let bench_a = bench_json_without_timings(&cfg_path);
    let bench_b = bench_json_without_timings(&cfg_path);
    assert_eq!(bench_a, bench_b, "bench reports differ beyond wall-clock fields");
    detail.push("bench stable modulo wall-clock".into());

    // Tensor and triplet files roundtrip bit-exactly.
    let mut rng = ChaCha12Rng::seed_from_u64(31);
    let mut m = Matrix::zeros(17, 9);
    for v in m.data_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    let t1 = dir.path().join("roundtrip1.htns");
    let t2 = dir.path().join("roundtrip2.htns");
    tensorio::write_matrix(&t1, &m).expect("write");
    let back = tensorio::read_matrix(&t1).expect("read");
    assert_eq!(back, m);
    tensorio::write_matrix(&t2, &back).expect("rewrite");
    assert_eq!(fs::read(&t1).unwrap(), fs::read(&t2).unwrap());

    let mut codes = PackedCodes::new(64).expect("codes");
    for _ in 0..13 {
        let row: Vec<u32> = (0..2).map(|_| rng.random()).collect();
        codes.push_row(&row).expect("push");
    }
    let c1 = dir.path().join("codes1.htns");
    let c2 = dir.path().join("codes2.htns");
    tensorio::write_codes(&c1, &codes).expect("write");
    let codes_back = tensorio::read_codes(&c1).expect("read");
    assert_eq!(codes_back, codes);
    tensorio::write_codes(&c2, &codes_back).expect("rewrite");
    assert_eq!(fs::read(&c1).unwrap(), fs::read(&c2).unwrap());

    let groups: Vec<TripletGroup> = {
        let mut w = workload();
        w.train_sequences = 1;
        w.train_seq_len = 24;
        w.groups_per_sequence = 3;
        w.synth.d = 12;
        w.synth.informative_dims = 4;
        w.synth.clusters = 3;
        workload_dataset(&w, 3).expect("dataset")
    };
    let p1 = dir.path().join("roundtrip1.htrp");
    let p2 = dir.path().join("roundtrip2.htrp");
    tensorio::write_triplets(&p1, &groups).expect("write");
    let groups_back = tensorio::read_triplets(&p1).expect("read");
    assert_eq!(groups_back, groups);
    tensorio::write_triplets(&p2, &groups_back).expect("rewrite");
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    detail.push("tensor/code/triplet roundtrips bit-exact".into());

    report(10, "determinism and io", true, &detail.join("; "));
}

fn write_small_cli_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "seed": 17,
        "workload": {
            "synth": {
                "d": 16, "informative_dims": 8, "clusters": 4,
                "center_scale": 1.0, "key_jitter": 0.5, "key_nuisance": 2.0,
                "query_jitter": 0.25, "query_nuisance": 0.05
            },
            "train": { "epochs": 2, "iterations_per_epoch": 3, "chunk_size": 64 },
            "rbit": 32,
            "train_sequences": 2,
            "train_seq_len": 48,
            "groups_per_sequence": 4,
            "cache_n": 64,
            "queries": 8,
            "k": 8
        },
        "engine": { "rbit": 32, "budget": 8, "dense_layers": [0], "heads_per_kv_group": 1 },
        "sim": { "layers": 2, "kv_heads": 1, "prefill": 12, "decode_steps": 8 },
        "bench": { "n_keys": 1024, "repeats": 2 },
        "sweep": { "axis": "budget", "budgets": [4, 1.0], "seeds": [1, 2] }
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).expect("write config");
    path
}

fn run_cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_hata")).args(args).output().expect("spawn hata");
    assert!(
        out.status.success(),
        "hata {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn bench_json_without_timings(cfg_path: &Path) -> Vec<serde_json::Value> {
    let out = Command::new(env!("CARGO_BIN_EXE_hata"))
        .args(["bench", "--config", cfg_path.to_str().unwrap()])
        .output()
        .expect("spawn hata");
    assert!(out.status.success(), "bench failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|line| {
            let mut v: serde_json::Value = serde_json::from_str(line).expect("JSON line");
            let obj = v.as_object_mut().expect("object");
            obj.remove("wall_ns_per_call");
            obj.remove("keys_per_second");
            v
        })
        .collect()
}

fn artifact_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(cur) = stack.pop() {
        for entry in fs::read_dir(&cur).expect("read dir") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).expect("relative").to_string_lossy().into_owned();
                files.push((rel, fs::read(&path).expect("read file")));
            }
        }
    }
    files.sort();
    files
}
