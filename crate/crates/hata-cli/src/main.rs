//! `hata` — hash-aware top-k attention driver.
//!
//! Subcommands: `gen-data` (triplet dataset), `train` (hash weights +
//! loss history), `encode` (packed key codes), `simulate` (engine run,
//! fresh or resumed from a snapshot), `eval` (quality sweeps → CSV),
//! `bench` (scoring-kernel reports → JSON lines).
//!
//! Exit codes: 0 success, 1 runtime or validation error, 2 usage error.

mod commands;
mod config;

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Parser, Subcommand};
use hata_core::Budget;

use config::Overrides;

#[derive(Parser)]
#[command(
    name = "hata",
    version,
    about = "Learned binary hashing for top-k attention: train, encode, simulate, evaluate, benchmark"
)]
struct Cli {
    /// JSON config file; omitted fields fall back to built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Root seed overriding the config's.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Output directory for artifacts (default: ./hata-out).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Hash bits, overriding both workload and engine (positive multiple of 32).
    #[arg(long, global = true, value_name = "N")]
    rbit: Option<usize>,

    /// Token budget, overriding the engine's: absolute `N` or percentage `P%`.
    #[arg(long, global = true, value_name = "N|P%")]
    budget: Option<String>,

    /// Training epochs, overriding the config's.
    #[arg(long, global = true, value_name = "N")]
    epochs: Option<usize>,

    /// Worker threads (fallback: the HATA_THREADS environment variable,
    /// else one per core).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic triplet dataset.
    GenData,
    /// Train hash weights and store them with the loss history.
    Train,
    /// Encode keys into packed sign codes.
    Encode,
    /// Run the decode engine, fresh or resumed from a snapshot.
    Simulate,
    /// Sweep budget or hash width and store recall/error rows as CSV.
    Eval,
    /// Benchmark Hamming vs dense scoring; reports as JSON lines.
    Bench,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {:#}", e);
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads(cli.threads)?;
    let budget = match cli.budget.as_deref() {
        Some(text) => Some(Budget::from_str(text)?),
        None => None,
    };
    let over = Overrides { seed: cli.seed, rbit: cli.rbit, budget, epochs: cli.epochs };
    let cfg = config::load(cli.config.as_deref(), &over)?;
    let out = commands::resolve_out(cli.out.clone());
    match cli.cmd {
        Cmd::GenData => commands::gen_data(&cfg, &out),
        Cmd::Train => commands::train(&cfg, &out),
        Cmd::Encode => commands::encode(&cfg, &out),
        Cmd::Simulate => commands::simulate(&cfg, &out),
        Cmd::Eval => commands::eval(&cfg, &out),
        Cmd::Bench => commands::bench(&cfg, cli.out.as_deref()),
    }
}

fn init_threads(flag: Option<usize>) -> anyhow::Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("HATA_THREADS") {
            Ok(raw) => Some(
                raw.parse::<usize>()
                    .map_err(|_| anyhow::anyhow!("HATA_THREADS must be an integer, got {:?}", raw))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            anyhow::bail!("thread count must be ≥ 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow::anyhow!("cannot configure {} worker threads: {}", n, e))?;
    }
    Ok(())
}
