use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bcpo::experiment::{
    gen_data, gen_env, load_spec, report, report_csv, run_experiment, DataStatus, ExperimentSpec,
};
use clap::{Args, Parser, Subcommand};

/// Offline RL with Bellman-consistent pessimism.
#[derive(Parser)]
#[command(name = "bcpo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the environment described by a spec to `<out>/env.json`.
    GenEnv(SpecArgs),
    /// Generate (or verify cached) datasets under `<out>/data/`.
    GenData(SpecArgs),
    /// Run every algorithm on every seed and write `<out>/results.json`.
    Run {
        #[command(flatten)]
        spec: SpecArgs,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Aggregate every `results.json` under a directory into a long-format CSV.
    Report {
        dir: PathBuf,
        /// Output file; defaults to `<dir>/report.csv`. Use `-` for stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SpecArgs {
    /// Experiment spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Comma-separated seeds overriding the spec.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory; defaults to the spec's `output_dir`, else `runs/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl SpecArgs {
    fn load(&self) -> Result<(ExperimentSpec, PathBuf)> {
        let mut spec =
            load_spec(&self.spec).with_context(|| format!("loading {}", self.spec.display()))?;
        if let Some(seeds) = &self.seeds {
            spec.seeds = seeds.clone();
            spec.validate()?;
        }
        let out = self
            .out
            .clone()
            .or_else(|| spec.output_dir.clone())
            .unwrap_or_else(|| Path::new("runs").join(&spec.name));
        Ok((spec, out))
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenEnv(args) => {
            let (spec, out) = args.load()?;
            let path = gen_env(&spec, &out)?;
            println!("wrote {}", path.display());
        }
        Command::GenData(args) => {
            let (spec, out) = args.load()?;
            for f in gen_data(&spec, &out)? {
                let status = match f.status {
                    DataStatus::Generated => "generated",
                    DataStatus::Cached => "cached",
                };
                println!("seed {}: {} ({status})", f.seed, f.path.display());
            }
        }
        Command::Run { spec: args, jobs } => {
            let (spec, out) = args.load()?;
            let summary = run_experiment(&spec, &out, jobs)?;
            for a in &summary.results.aggregates {
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                println!(
                    "{:<12} n={:<8} mean={} std={} seeds={} failed={}",
                    a.algorithm,
                    a.n,
                    fmt(a.mean),
                    fmt(a.std),
                    a.n_seeds,
                    a.n_failed
                );
            }
            println!("wrote {}", summary.results_path.display());
            let failed: Vec<_> = summary.results.records.iter().filter(|r| !r.ok).collect();
            if !failed.is_empty() {
                for r in failed {
                    eprintln!(
                        "failed: {} seed {}: {}",
                        r.algorithm,
                        r.seed,
                        r.error.as_deref().unwrap_or("unknown error")
                    );
                }
                return Ok(ExitCode::from(2));
            }
        }
        Command::Report { dir, out } => {
            if !dir.is_dir() {
                bail!("{} is not a directory", dir.display());
            }
            let csv = report_csv(&report(&dir)?);
            match out.as_deref() {
                Some(p) if p == Path::new("-") => print!("{csv}"),
                Some(p) => fs::write(p, csv)?,
                None => {
                    let p = dir.join("report.csv");
                    fs::write(&p, csv)?;
                    println!("wrote {}", p.display());
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
