//! Command-line front end for the unlearning laboratory.
//!
//! Subcommands: `train` (initial + ideal models), `unlearn` (the configured
//! runs), `sweep` (models + runs + aggregate), `report` (aggregate table
//! from per-run CSVs), `figures` (figure data files). Exit code 0 on
//! success, nonzero with a diagnostic otherwise.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use unlearn_lab::config::ExperimentConfig;
use unlearn_lab::harness;

#[derive(Parser)]
#[command(
    name = "unlearn-lab",
    about = "Desk-scale machine-unlearning experiments with gradient-agreement masks"
)]
struct Cli {
    /// Config or manifest file (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Restrict the sweep to one seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides output.dir from the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the initial and ideal models for every configured seed.
    Train,
    /// Run the configured unlearning runs against existing or fresh models.
    Unlearn,
    /// Full sweep: models, unlearning runs, aggregate table.
    Sweep,
    /// Recompute and print the aggregate table from per-run CSVs.
    Report,
    /// Emit figure data (metric curves, agreement-probability histogram).
    Figures,
}

fn load_config(cli: &Cli) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.sweep_seeds = vec![seed];
        if cfg.run_seed.is_some() {
            cfg.run_seed = Some(seed);
        }
    }
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    cfg.output_dir = out.display().to_string();
    Ok((cfg, out))
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: &Cli) -> Result<()> {
    let (cfg, out) = load_config(cli)?;
    match cli.command {
        Command::Train => {
            let split = harness::build_split(&cfg)?;
            let mut seeds: Vec<u64> = cfg.effective_runs().iter().map(|&(_, _, s)| s).collect();
            seeds.sort_unstable();
            seeds.dedup();
            for seed in seeds {
                harness::ensure_models(&cfg, &split, seed, &out)?;
                let log = out
                    .join("models")
                    .join(format!("seed{seed}"))
                    .join("train_log.txt");
                let text = std::fs::read_to_string(&log).unwrap_or_default();
                println!("seed {seed}:");
                for line in text.lines() {
                    println!("  {line}");
                }
            }
            println!("models written to {}", out.join("models").display());
        }
        Command::Unlearn | Command::Sweep => {
            let outcome = harness::run_sweep(&cfg, &out)?;
            for record in &outcome.records {
                let last = record.reports.last().expect("per-epoch reports");
                println!(
                    "{}{}: epoch {} rua {:+.2} ta {:.2} ra {:.2} mia_entropy {:.3}",
                    record.run_id,
                    if record.reused { " (reused)" } else { "" },
                    last.epoch,
                    last.rua,
                    last.ta,
                    last.ra,
                    last.mia.entropy,
                );
            }
            if !outcome.failures.is_empty() {
                for (id, msg) in &outcome.failures {
                    eprintln!("run {id} failed: {msg}");
                }
                bail!("{} run(s) failed", outcome.failures.len());
            }
            let table = std::fs::read_to_string(out.join("aggregate.txt"))?;
            println!("\n{table}");
        }
        Command::Report => {
            let rows = harness::aggregate_from_dir(&out)?;
            std::fs::write(out.join("aggregate.csv"), harness::aggregate_csv(&rows))?;
            let table = harness::aggregate_text(&rows);
            std::fs::write(out.join("aggregate.txt"), &table)?;
            println!("{table}");
        }
        Command::Figures => {
            let summaries = harness::emit_figures(&out)?;
            println!("figure data written to {}", out.join("figures").display());
            for s in summaries {
                println!(
                    "{}: {} parameters | agree-prob mass low(<0.35) {:.0} mid {:.0} high(>0.65) {:.0}",
                    s.series, s.total, s.low, s.mid, s.high
                );
            }
        }
    }
    Ok(())
}
