use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fairk::error::Error;
use fairk::harness::{self, ExperimentConfig};
use fairk::selection::PolicyKind;

#[derive(Debug, Parser)]
#[command(name = "fairk", version, about = "Federated training with freshness-aware gradient selection over a simulated analog channel")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Selection policy: fair_k, top_k, round_robin or top_rand.
    #[arg(long, global = true)]
    policy: Option<PolicyKind>,
    /// Number of rounds (overrides the config).
    #[arg(long, global = true)]
    rounds: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one policy and write metrics.jsonl and summary.csv.
    Run,
    /// Analytic vs simulated staleness distribution, written to aou_dist.csv.
    AouDist,
    /// Estimate smoothness and noise constants into constants.json.
    EstimateLipschitz,
    /// Evaluate the convergence bound into bound.json.
    Bound {
        /// Reuse a constants.json instead of estimating.
        #[arg(long)]
        constants: Option<PathBuf>,
        /// Use the explicit proof constants.
        #[arg(long)]
        exact_constants: bool,
        /// Reject inadmissible learning rates.
        #[arg(long)]
        strict: bool,
    },
    /// Matched-seed runs of several policies, joined in compare.csv.
    Compare,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(policy) = cli.policy {
        cfg.policy.kind = policy;
    }
    if let Some(rounds) = cli.rounds {
        cfg.rounds = rounds;
    }
    Ok(cfg)
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).unwrap_or_default()
}

fn execute(cli: Cli) -> Result<(), Error> {
    let mut cfg = load(&cli)?;
    match cli.command {
        Command::Run => {
            let s = harness::run(&cfg)?;
            println!(
                "{} rounds of {} written to {} (final test accuracy {})",
                s.rounds_completed,
                s.policy,
                cfg.out.display(),
                s.final_test_accuracy.map_or("n/a".to_string(), |a| format!("{a:.4}"))
            );
        }
        Command::Compare => {
            for s in harness::compare(&cfg)? {
                println!(
                    "{:<12} mean AoU {:>9.3}  final accuracy {}",
                    s.policy,
                    s.mean_avg_aou,
                    s.final_test_accuracy.map_or("n/a".to_string(), |a| format!("{a:.4}"))
                );
            }
            println!("compare.csv written to {}", cfg.out.display());
        }
        Command::AouDist => {
            let r = harness::aou_dist(&cfg)?;
            println!("{}", json(&r));
        }
        Command::EstimateLipschitz => {
            let c = harness::estimate_constants(&cfg)?;
            println!("{}", json(&c));
        }
        Command::Bound { constants, exact_constants, strict } => {
            cfg.estimate.exact_constants |= exact_constants;
            cfg.estimate.strict |= strict;
            let doc = harness::bound(&cfg, constants.as_deref())?;
            println!("{}", json(&doc));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Parse { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
