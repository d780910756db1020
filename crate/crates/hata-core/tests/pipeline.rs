//! Integration tests driving the crate through its public API only, the way
//! an embedding application would: build a workload, train a head, evaluate
//! selection quality, run the multi-head engine, and resume from a snapshot.

use hata_core::engine::Engine;
use hata_core::eval::{
    eval_recall, random_workload_head, render_csv, sweep, train_workload_head, workload_dataset,
    SweepAxis, SWEEP_CSV_HEADER,
};
use hata_core::{
    Budget, EngineConfig, HeadStep, Matrix, SyntheticConfig, SyntheticDecoder, TrainConfig,
    WorkloadConfig,
};

/// A workload small enough for test speed but structurally identical to the
/// default one (clustered keys under heavy nuisance).
fn tiny_workload() -> WorkloadConfig {
    WorkloadConfig {
        synth: SyntheticConfig {
            d: 16,
            informative_dims: 8,
            clusters: 4,
            ..SyntheticConfig::default()
        },
        train: TrainConfig {
            epochs: 3,
            iterations_per_epoch: 4,
            chunk_size: 128,
            ..TrainConfig::default()
        },
        rbit: 32,
        train_sequences: 3,
        train_seq_len: 64,
        groups_per_sequence: 4,
        cache_n: 64,
        queries: 8,
        k: 8,
    }
}

#[test]
fn training_pipeline_is_deterministic_and_well_formed() {
    let w = tiny_workload();
    let seed = 7;

    let dataset = workload_dataset(&w, seed).expect("dataset");
    assert_eq!(dataset.len(), w.train_sequences * w.groups_per_sequence);
    for g in &dataset {
        assert_eq!(g.dim(), w.synth.d);
        assert_eq!(g.labels.len(), g.keys.rows());
        assert!(g.labels.iter().all(|&l| l == -1.0 || (1.0..=20.0).contains(&l)));
    }

    let (weights, history) = train_workload_head(&w, w.rbit, seed).expect("train");
    assert_eq!(weights.d(), w.synth.d);
    assert_eq!(weights.r(), w.rbit);
    assert_eq!(history.len(), w.train.epochs);
    assert!(history.iter().all(|h| h.total.is_finite()));

    // Same inputs, same bits: the whole pipeline is seed-deterministic.
    let (again, history_again) = train_workload_head(&w, w.rbit, seed).expect("train");
    assert_eq!(weights.matrix().data(), again.matrix().data());
    assert_eq!(history, history_again);

    let report = eval_recall(&w, &weights, Budget::Absolute(w.k), seed).expect("eval");
    assert_eq!(report.k, w.k);
    assert_eq!(report.n, w.cache_n);
    assert_eq!(report.queries, w.queries);
    assert!((0.0..=1.0).contains(&report.recall));
    assert!(report.linf >= 0.0 && report.linf.is_finite());
    assert!(report.cosine <= 1.0 + 1e-6);

    // The untrained baseline evaluates on the same cache without error.
    let random = random_workload_head(&w, w.rbit, seed).expect("init");
    let baseline = eval_recall(&w, &random, Budget::Absolute(w.k), seed).expect("eval");
    assert_eq!(baseline.k, report.k);

    // A full budget selects everything, so dense and budgeted attention agree.
    let full = eval_recall(&w, &weights, Budget::Fraction(1.0), seed).expect("eval");
    assert!(full.linf <= 1e-5, "full budget L∞ {}", full.linf);
    assert!((full.recall - 1.0).abs() <= 1e-12);
}

#[test]
fn sweep_emits_one_row_per_axis_point_and_seed() {
    let w = tiny_workload();
    let rows = sweep(&w, &SweepAxis::Budget(vec![Budget::Absolute(4), Budget::Fraction(1.0)]), &[1, 2])
        .expect("sweep");
    assert_eq!(rows.len(), 4);
    let csv = render_csv(&rows);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(SWEEP_CSV_HEADER));
    assert_eq!(lines.count(), 4);

    // Rerunning the sweep reproduces the exact same table.
    let rows_again =
        sweep(&w, &SweepAxis::Budget(vec![Budget::Absolute(4), Budget::Fraction(1.0)]), &[1, 2])
            .expect("sweep");
    assert_eq!(render_csv(&rows_again), csv);
}

#[test]
fn snapshot_resume_reproduces_uninterrupted_decode() {
    let d = 16;
    let cfg = EngineConfig {
        rbit: 32,
        budget: Budget::Absolute(6),
        dense_layers: [0].into(),
        heads_per_kv_group: 2,
    };
    let kv_heads = 2;
    let layers = 2;
    let prefill_len = 8;

    // Record every head's inputs once so both runs see identical streams.
    let mut prefills: Vec<(Vec<Matrix>, Matrix, Matrix)> = Vec::new();
    let mut steps: Vec<Vec<HeadStep>> = Vec::new();
    for h in 0..layers * kv_heads {
        let mut driver = SyntheticDecoder::new(d, cfg.heads_per_kv_group, 100 + h as u64)
            .expect("driver");
        prefills.push(driver.prefill_inputs(prefill_len).expect("prefill inputs"));
        steps.push((0..6).map(|_| driver.next_step()).collect());
    }

    let build = |cfg: &EngineConfig| -> Engine {
        let mut engine = Engine::new(cfg.clone()).expect("engine");
        for layer in 0..layers {
            for head in 0..kv_heads {
                let idx = layer * kv_heads + head;
                let w = hata_core::HashWeights::random(layer, head, d, cfg.rbit, 500 + idx as u64)
                    .expect("weights");
                engine.add_head(w).expect("add head");
                let (qs, keys, values) = &prefills[idx];
                engine.prefill_head(layer, head, qs, keys, values).expect("prefill");
            }
        }
        engine
    };
    let decode_round =
        |engine: &mut Engine, t: usize| -> Vec<(usize, Vec<f32>)> {
            let mut all = Vec::new();
            for layer in 0..layers {
                let layer_steps: Vec<(usize, HeadStep)> = (0..kv_heads)
                    .map(|h| (h, steps[layer * kv_heads + h][t].clone()))
                    .collect();
                for (h, out) in engine.decode_layer(layer, &layer_steps).expect("decode") {
                    all.push((layer * kv_heads + h, out.outputs.data().to_vec()));
                }
            }
            all
        };

    // Uninterrupted: six decode steps straight through.
    let mut straight = build(&cfg);
    let mut straight_fresh_idx = Vec::new();
    for t in 0..6 {
        straight_fresh_idx.push(decode_round(&mut straight, t));
    }

    // Interrupted: three steps, snapshot to disk, reload, three more.
    let dir = tempfile::tempdir().expect("tempdir");
    let mut first_half = build(&cfg);
    for t in 0..3 {
        decode_round(&mut first_half, t);
    }
    first_half.save_snapshot(dir.path()).expect("save");
    let mut resumed = Engine::load_snapshot(dir.path()).expect("load");

    assert_eq!(resumed.config(), &cfg);
    let heads: Vec<(usize, usize)> = resumed.heads().collect();
    assert_eq!(heads, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    for &(layer, head) in &heads {
        let state = resumed.state(layer, head).expect("state");
        assert_eq!(state.len(), prefill_len + 3);
        let w = resumed.weights_for(layer, head).expect("weights");
        let orig = first_half.weights_for(layer, head).expect("weights");
        assert_eq!(w.matrix().data(), orig.matrix().data());
    }

    for (t, expected) in straight_fresh_idx.iter().enumerate().skip(3) {
        let resumed_out = decode_round(&mut resumed, t);
        assert_eq!(&resumed_out, expected, "decode step {} diverged after snapshot resume", t);
    }
}
