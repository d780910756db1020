//! Subcommand implementations.
//!
//! Every command is a pure function of (config, root seed): randomness flows
//! through named sub-seeds, artifacts are written with bit-exact formats, and
//! anything timing-dependent (bench wall times) is confined to clearly marked
//! fields. The data/train sub-seed names match the library's workload
//! helpers, so `train` on a `gen-data` artifact equals `train` generating its
//! dataset in-process under the same root seed.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hata_core::codec::hash_encode;
use hata_core::eval::{self, SweepAxis};
use hata_core::sampling::generate_sequence;
use hata_core::seeds;
use hata_core::tensorio::{
    read_matrix, read_triplets, write_codes, write_matrix, write_triplets,
};
use hata_core::{Engine, HashWeights, HeadStep, Matrix, SyntheticDecoder};

use crate::config::{AxisKind, CliConfig};

fn ensure_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Generates the training sequences and triplet dataset for the configured
/// workload and stores them as one triplet file.
pub fn gen_data(cfg: &CliConfig, out: &Path) -> Result<()> {
    ensure_out(out)?;
    let w = &cfg.workload;
    let dataset = eval::workload_dataset(w, cfg.seed)?;
    let path = out.join("triplets.htrp");
    write_triplets(&path, &dataset)?;
    println!(
        "wrote {} ({} groups from {} sequences of length {})",
        path.display(),
        dataset.len(),
        w.train_sequences,
        w.train_seq_len
    );
    Ok(())
}

/// Trains hash weights on the configured dataset (from `data` if set, else
/// generated in-process exactly as `gen-data` would) and stores the weight
/// matrix plus the per-epoch held-out loss history.
pub fn train(cfg: &CliConfig, out: &Path) -> Result<()> {
    let dataset = match &cfg.data {
        Some(path) => read_triplets(path)?,
        None => eval::workload_dataset(&cfg.workload, cfg.seed)?,
    };
    if dataset.is_empty() {
        bail!("training dataset is empty");
    }
    let d = dataset[0].dim();
    let init = HashWeights::random(0, 0, d, cfg.workload.rbit, seeds::derive(cfg.seed, "init"))?;
    let mut train_cfg = cfg.workload.train.clone();
    train_cfg.seed = seeds::derive(cfg.seed, "train");
    let (weights, history) = hata_core::trainer::train(&dataset, &train_cfg, Some(init))?;

    ensure_out(out)?;
    let wpath = out.join("weights.htns");
    write_matrix(&wpath, weights.matrix())?;
    println!("wrote {} ({}x{} hash projection)", wpath.display(), weights.d(), weights.r());
    let hist = serde_json::to_string_pretty(&history).context("serialize loss history")?;
    write_text(&out.join("history.json"), &(hist + "\n"))?;
    if let Some(last) = history.last() {
        println!(
            "final held-out loss: total {:.6e} (ordering {:.6e}, balance {:.6e}, decorrelation {:.6e})",
            last.total, last.similarity_term, last.balance_term, last.ortho_term
        );
    }
    Ok(())
}

/// Encodes a key matrix (from `keys` if set, else the workload's evaluation
/// cache) into packed sign codes under the configured hash weights (from
/// `weights` if set, else the seed's random projection).
pub fn encode(cfg: &CliConfig, out: &Path) -> Result<()> {
    let keys = match &cfg.keys {
        Some(path) => read_matrix(path)?,
        None => {
            let w = &cfg.workload;
            generate_sequence(&w.synth, w.cache_n, seeds::derive(cfg.seed, "eval-seq"))?.1
        }
    };
    let weights = load_or_init_weights(cfg, keys.cols())?;
    let codes = hash_encode(&keys, &weights)?;
    ensure_out(out)?;
    let path = out.join("codes.htns");
    write_codes(&path, &codes)?;
    println!(
        "wrote {} ({} codes, {} bits each, {} bytes/key)",
        path.display(),
        codes.rows(),
        codes.rbit(),
        codes.rbit() / 8
    );
    Ok(())
}

fn load_or_init_weights(cfg: &CliConfig, d: usize) -> Result<HashWeights> {
    match &cfg.weights {
        Some(path) => {
            let m = read_matrix(path)?;
            if m.rows() != d {
                bail!(
                    "hash weights {} project {} dims but the keys have {}",
                    path.display(),
                    m.rows(),
                    d
                );
            }
            HashWeights::new(0, 0, m).map_err(anyhow::Error::from)
        }
        None => HashWeights::random(0, 0, d, cfg.workload.rbit, seeds::derive(cfg.seed, "init"))
            .map_err(anyhow::Error::from),
    }
}

/// Runs the decode engine — fresh (prefill then decode) or resumed from a
/// snapshot (decode only) — and stores per-head decode outputs plus a final
/// snapshot under `out`.
pub fn simulate(cfg: &CliConfig, out: &Path) -> Result<()> {
    let d = cfg.workload.synth.d;
    let (mut engine, resumed) = match &cfg.snapshot {
        Some(dir) => (Engine::load_snapshot(dir)?, true),
        None => {
            let mut engine = Engine::new(cfg.engine.clone())?;
            for layer in 0..cfg.sim.layers {
                for head in 0..cfg.sim.kv_heads {
                    let idx = (layer * cfg.sim.kv_heads + head) as u64;
                    engine.add_head(HashWeights::random(
                        layer,
                        head,
                        d,
                        cfg.engine.rbit,
                        seeds::derive_indexed(cfg.seed, "head", idx),
                    )?)?;
                }
            }
            (engine, false)
        }
    };

    let heads: Vec<(usize, usize)> = engine.heads().collect();
    if heads.is_empty() {
        bail!("engine has no heads to simulate");
    }
    let group = engine.config().heads_per_kv_group;
    let dim = match engine.state(heads[0].0, heads[0].1) {
        Some(s) => s.d(),
        None => d,
    };

    let mut drivers: Vec<SyntheticDecoder> = heads
        .iter()
        .enumerate()
        .map(|(i, _)| SyntheticDecoder::new(dim, group, seeds::derive_indexed(cfg.seed, "driver", i as u64)))
        .collect::<hata_core::Result<_>>()?;

    if !resumed {
        if cfg.sim.prefill == 0 {
            bail!("fresh simulation needs prefill ≥ 1");
        }
        for (i, &(layer, head)) in heads.iter().enumerate() {
            let (queries, keys, values) = drivers[i].prefill_inputs(cfg.sim.prefill)?;
            engine.prefill_head(layer, head, &queries, &keys, &values)?;
        }
    }

    let mut outputs: Vec<Matrix> = heads.iter().map(|_| Matrix::zeros(0, dim)).collect();
    for _ in 0..cfg.sim.decode_steps {
        let mut per_layer: std::collections::BTreeMap<usize, Vec<(usize, HeadStep)>> =
            std::collections::BTreeMap::new();
        for (i, &(layer, head)) in heads.iter().enumerate() {
            per_layer.entry(layer).or_default().push((head, drivers[i].next_step()));
        }
        for (&layer, steps) in &per_layer {
            let outs = engine.decode_layer(layer, steps)?;
            for (head, decode) in outs {
                let slot = heads.iter().position(|&(l, h)| (l, h) == (layer, head)).expect("known head");
                for row in 0..decode.outputs.rows() {
                    outputs[slot].push_row(decode.outputs.row(row))?;
                }
            }
        }
    }

    ensure_out(out)?;
    for (i, &(layer, head)) in heads.iter().enumerate() {
        if outputs[i].rows() == 0 {
            continue;
        }
        let path = out.join(format!("outputs_L{}_H{}.htns", layer, head));
        write_matrix(&path, &outputs[i])?;
        println!("wrote {}", path.display());
    }
    let snap = out.join("snapshot");
    engine.save_snapshot(&snap)?;
    println!(
        "wrote {} ({} heads, cache length {})",
        snap.display(),
        heads.len(),
        engine.state(heads[0].0, heads[0].1).map(|s| s.len()).unwrap_or(0)
    );
    Ok(())
}

/// Runs the configured sweep and stores it as CSV.
pub fn eval(cfg: &CliConfig, out: &Path) -> Result<()> {
    let axis = match cfg.sweep.axis {
        AxisKind::Budget => SweepAxis::Budget(cfg.sweep.budgets.clone()),
        AxisKind::Rbit => SweepAxis::Rbit(cfg.sweep.rbits.clone()),
    };
    let rows = eval::sweep(&cfg.workload, &axis, &cfg.sweep.seeds)?;
    ensure_out(out)?;
    let path = out.join("sweep.csv");
    eval::write_csv(&path, &rows)?;
    println!("wrote {} ({} rows)", path.display(), rows.len());
    Ok(())
}

/// Benchmarks Hamming-code scoring against dense dot-product scoring and
/// prints one JSON report line per method. Wall-time fields vary run to run;
/// shapes, byte accounting, and checksums are seed-determined.
pub fn bench(cfg: &CliConfig, out: Option<&Path>) -> Result<()> {
    let reports = eval::bench_scoring(
        cfg.bench.n_keys,
        cfg.workload.synth.d,
        cfg.workload.rbit,
        cfg.bench.repeats,
        seeds::derive(cfg.seed, "bench"),
    )?;
    let mut lines = String::new();
    for r in &reports {
        lines.push_str(&serde_json::to_string(r).context("serialize bench report")?);
        lines.push('\n');
    }
    print!("{}", lines);
    if let Some(out) = out {
        ensure_out(out)?;
        let path = out.join("bench.jsonl");
        fs::write(&path, &lines).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

/// Resolves the output directory: the flag wins, else a local default.
pub fn resolve_out(flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| PathBuf::from("hata-out"))
}
