//! Command-line driver for TOML-configured benchmark runs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use smcbed::bench::{self, BenchmarkConfig};

#[derive(Parser)]
#[command(name = "smcbed", version, about = "Adaptive-experiment benchmark runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Benchmark configuration file (TOML).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for the output files.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run every trial of the benchmark; writes records.csv, summary.csv,
    /// and cost.csv.
    Run {
        #[command(flatten)]
        common: Common,
        /// Override the config's trial count.
        #[arg(long)]
        trials: Option<u64>,
        /// Worker threads for the trial loop (1 forces the serial path).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Accumulate the error bound along the heuristic's schedule without
    /// simulating outcomes; writes bcrb.csv.
    Bcrb {
        #[command(flatten)]
        common: Common,
    },
    /// Replay one trial and dump particle snapshots; writes snapshots.csv.
    Inspect {
        #[command(flatten)]
        common: Common,
        /// Which trial to replay.
        #[arg(long, default_value_t = 0)]
        trial: u64,
        /// Snapshot interval in experiments.
        #[arg(long, default_value_t = 1)]
        every: usize,
    },
}

fn load(common: &Common, trials: Option<u64>) -> anyhow::Result<BenchmarkConfig> {
    let mut cfg = BenchmarkConfig::from_path(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.run.base_seed = seed;
    }
    if let Some(trials) = trials {
        cfg.run.n_trials = trials;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { common, trials, threads } => {
            let cfg = load(&common, trials)?;
            let summary = bench::run_benchmark(&cfg, threads, &common.out_dir)?;
            let last = summary.last().expect("summary always has the prior row");
            println!(
                "{} trials x {} experiments: final mean loss {:.6e}, collapsed {}",
                cfg.run.n_trials, cfg.run.n_experiments, last.mean_loss, last.n_collapsed
            );
            for file in ["records.csv", "summary.csv", "cost.csv"] {
                println!("wrote {}", common.out_dir.join(file).display());
            }
        }
        Command::Bcrb { common } => {
            let cfg = load(&common, None)?;
            let rows = bench::run_bcrb_schedule(&cfg, &common.out_dir)?;
            let last = rows.last().expect("schedule always has the prior row");
            match last.bcrb_trace_q {
                Some(b) => println!("bound after {} experiments: {b:.6e}", last.n),
                None => println!("bound after {} experiments: singular", last.n),
            }
            println!("wrote {}", common.out_dir.join("bcrb.csv").display());
        }
        Command::Inspect { common, trial, every } => {
            let cfg = load(&common, None)?;
            let report = bench::inspect_trial(&cfg, trial, every, &common.out_dir)?;
            println!("trial {trial} (seed {})", report.seed);
            println!("truth:    {:?}", report.truth);
            println!("estimate: {:?}", report.estimate);
            println!(
                "{} snapshots in {}",
                report.snapshots,
                common.out_dir.join("snapshots.csv").display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
