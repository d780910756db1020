//! JSON configuration with flag overrides.
//!
//! One document drives every subcommand. All fields are optional; defaults
//! mirror the library's (training hyperparameters, rbit = 128, budget =
//! 1.56%, dense layers {0, 1}). Unknown keys are rejected so typos surface
//! instead of silently falling back to defaults.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hata_core::{Budget, EngineConfig, WorkloadConfig};
use serde::{Deserialize, Serialize};

/// Root configuration document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    /// Root seed; every subcommand derives its own named sub-seeds from it.
    pub seed: u64,
    /// Synthetic workload: generator, training hyperparameters, dataset and
    /// evaluation sizes.
    pub workload: WorkloadConfig,
    /// Decode engine: hash width, token budget, dense-layer policy, GQA group
    /// width.
    pub engine: EngineConfig,
    /// `simulate` shape.
    pub sim: SimPart,
    /// `bench` shape.
    pub bench: BenchPart,
    /// `eval` sweep axis and cells.
    pub sweep: SweepPart,
    /// Triplet dataset consumed by `train`; generated on the fly when absent.
    pub data: Option<PathBuf>,
    /// Key matrix consumed by `encode`; generated on the fly when absent.
    pub keys: Option<PathBuf>,
    /// Hash weights consumed by `encode`; random projection when absent.
    pub weights: Option<PathBuf>,
    /// Snapshot directory resumed by `simulate`; fresh engine when absent.
    pub snapshot: Option<PathBuf>,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            seed: 42,
            workload: WorkloadConfig::default(),
            engine: EngineConfig::default(),
            sim: SimPart::default(),
            bench: BenchPart::default(),
            sweep: SweepPart::default(),
            data: None,
            keys: None,
            weights: None,
            snapshot: None,
        }
    }
}

/// Shape of the simulated multi-layer decode run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimPart {
    pub layers: usize,
    pub kv_heads: usize,
    /// Prompt length processed before decoding starts.
    pub prefill: usize,
    pub decode_steps: usize,
}

impl Default for SimPart {
    fn default() -> Self {
        SimPart { layers: 2, kv_heads: 1, prefill: 32, decode_steps: 96 }
    }
}

/// Shape of the scoring-kernel benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchPart {
    /// Cached keys scored per call; at least 1024.
    pub n_keys: usize,
    /// Timed repetitions; the median is reported.
    pub repeats: usize,
}

impl Default for BenchPart {
    fn default() -> Self {
        BenchPart { n_keys: 1 << 16, repeats: 5 }
    }
}

/// Which parameter `eval` sweeps and over which cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisKind {
    Budget,
    Rbit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepPart {
    pub axis: AxisKind,
    /// Budget cells (integers = absolute tokens, fractions or "P%" strings =
    /// shares of the cache).
    pub budgets: Vec<Budget>,
    /// Hash-width cells.
    pub rbits: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for SweepPart {
    fn default() -> Self {
        SweepPart {
            axis: AxisKind::Budget,
            budgets: vec![
                Budget::Fraction(0.0156),
                Budget::Fraction(0.0313),
                Budget::Fraction(0.0625),
                Budget::Fraction(0.125),
                Budget::Fraction(1.0),
            ],
            rbits: vec![32, 64, 128],
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

/// Command-line overrides applied on top of the loaded document.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub rbit: Option<usize>,
    pub budget: Option<Budget>,
    pub epochs: Option<usize>,
}

/// Loads the config file if given, else starts from defaults, then applies
/// flag overrides field by field.
pub fn load(path: Option<&Path>, over: &Overrides) -> Result<CliConfig> {
    let mut cfg = match path {
        Some(p) => {
            let raw = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read config file {}", p.display()))?;
            serde_json::from_str::<CliConfig>(&raw)
                .with_context(|| format!("invalid config file {}", p.display()))?
        }
        None => CliConfig::default(),
    };
    if let Some(seed) = over.seed {
        cfg.seed = seed;
    }
    if let Some(rbit) = over.rbit {
        cfg.workload.rbit = rbit;
        cfg.engine.rbit = rbit;
    }
    if let Some(budget) = over.budget {
        cfg.engine.budget = budget;
    }
    if let Some(epochs) = over.epochs {
        cfg.workload.train.epochs = epochs;
    }
    cfg.workload.validate().map_err(anyhow::Error::from)?;
    cfg.engine.validate().map_err(anyhow::Error::from)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_deserialize_from_empty_document() {
        let cfg: CliConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, CliConfig::default());
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.engine.rbit, 128);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<CliConfig>("{\"sede\": 1}").unwrap_err();
        assert!(err.to_string().contains("sede"));
    }

    #[test]
    fn budget_cells_accept_mixed_shapes() {
        let cfg: CliConfig = serde_json::from_str(
            "{\"sweep\": {\"axis\": \"budget\", \"budgets\": [64, 0.125, \"12.5%\"]}}",
        )
        .unwrap();
        assert_eq!(
            cfg.sweep.budgets,
            vec![Budget::Absolute(64), Budget::Fraction(0.125), Budget::Fraction(0.125)]
        );
    }

    #[test]
    fn overrides_win_over_document() {
        let over = Overrides {
            seed: Some(7),
            rbit: Some(64),
            budget: Some(Budget::Absolute(16)),
            epochs: Some(3),
        };
        let cfg = load(None, &over).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.workload.rbit, 64);
        assert_eq!(cfg.engine.rbit, 64);
        assert_eq!(cfg.engine.budget, Budget::Absolute(16));
        assert_eq!(cfg.workload.train.epochs, 3);
    }

    #[test]
    fn invalid_override_fails_validation() {
        let over = Overrides { rbit: Some(48), ..Overrides::default() };
        assert!(load(None, &over).is_err());
    }
}
