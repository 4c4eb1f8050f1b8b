use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use conformity_core::{build_topology, validate, TopologyKind, TopologySpec};
use conformity_harness::summary::TRAJECTORIES_FILE;
use conformity_harness::{
    read_records, run_experiment, summarize, trajectories, write_summaries, ExperimentConfig, SweepOptions, Table,
};

#[derive(Parser)]
#[command(
    name = "conformity",
    version,
    about = "Conformity dynamics sweeps over agent networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a sweep and write records plus summary tables.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// Continue an existing records file, skipping finished runs.
        #[arg(long)]
        resume: bool,
    },
    /// Aggregate records into a centralized or distributed table.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        table: TableArg,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export mean CI per round for distributed runs.
    Trajectories {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a topology, print it as JSON and check its invariants.
    ValidateTopology {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long, default_value_t = 7)]
        n: usize,
        /// Neighbor count, rings only.
        #[arg(long)]
        m: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TableArg {
    Centralized,
    Distributed,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Star,
    Hierarchical,
    Ring,
    Complete,
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            workers,
            resume,
        } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            if workers.is_some() {
                cfg.workers = workers;
            }
            let report = run_experiment(&cfg, SweepOptions { resume, max_runs: None })?;
            eprintln!(
                "{} planned, {} already present, {} executed ({} failed) -> {}",
                report.planned,
                report.skipped,
                report.executed,
                report.failed,
                report.records_path.display()
            );
            let records = read_records(&report.records_path)?;
            for name in write_summaries(&records, &cfg.output_dir)? {
                eprintln!("wrote {}", cfg.output_dir.join(name).display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Summarize { input, table, out } => {
            let records = read_records(&input)?;
            let table = match table {
                TableArg::Centralized => Table::Centralized,
                TableArg::Distributed => Table::Distributed,
            };
            emit(&summarize(&records, table)?, out.as_ref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Trajectories { input, out } => {
            let records = read_records(&input)?;
            let out = out.or_else(|| input.parent().map(|d| d.join(TRAJECTORIES_FILE)));
            emit(&trajectories(&records)?, out.as_ref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::ValidateTopology { kind, n, m } => {
            let kind = match (kind, m) {
                (KindArg::Ring, Some(m)) => TopologyKind::Ring { m },
                (KindArg::Ring, None) => bail!("--m is required for rings"),
                (_, Some(_)) => bail!("--m only applies to rings"),
                (KindArg::Star, None) => TopologyKind::Star,
                (KindArg::Hierarchical, None) => TopologyKind::Hierarchical,
                (KindArg::Complete, None) => TopologyKind::Complete,
            };
            let topology = build_topology(&TopologySpec::new(kind, n))?;
            println!("{}", serde_json::to_string_pretty(&topology)?);
            let violations = validate(&topology);
            if violations.is_empty() {
                eprintln!("{kind}: ok");
                Ok(ExitCode::SUCCESS)
            } else {
                for v in &violations {
                    eprintln!("violation: {v}");
                }
                Ok(ExitCode::FAILURE)
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
