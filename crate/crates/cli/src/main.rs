//! `stochwave`: run a preset or a TOML experiment file and write CSV tables,
//! stability series and a manifest.
//!
//! Precedence of settings: command-line flag, then config file, then preset.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use stochwave::experiment::{resolve, run_experiment, Overrides, RunOptions, RunReport, PRESETS};
use stochwave::Discretization;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scheme {
    Implicit,
    Mcn,
}

#[derive(Debug, Parser)]
#[command(name = "stochwave", version, about = "Monte Carlo experiments for the stochastic wave equation")]
struct Args {
    /// Built-in experiment.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: Option<String>,
    /// TOML experiment file, merged over the preset when both are given.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of Monte Carlo samples.
    #[arg(long)]
    samples: Option<usize>,
    /// Master seed of the noise streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Time step of fixed-step studies and the coarsest step of temporal ladders.
    #[arg(long)]
    tau: Option<f64>,
    /// Mesh level (2^L cells per side) of the fixed-mesh studies.
    #[arg(long)]
    h_level: Option<u32>,
    /// Treatment of the nonlinear drift.
    #[arg(long, value_enum)]
    scheme: Option<Scheme>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// 5000 samples and the full ladders.
    #[arg(long)]
    paper_scale: bool,
}

fn summarize(report: &RunReport) {
    let c = &report.config;
    println!("{}: {} samples, seed {}, manifest {}", c.name, c.samples, c.seed, report.manifest_hash);
    let studies =
        [("spatial", report.spatial.as_ref().map(|s| &s.table)), ("temporal", report.temporal.as_ref().map(|s| &s.table))];
    for (label, table) in studies.into_iter().chain([("analytic", report.analytic.as_ref().map(|a| &a.0))]) {
        if let Some(o) = table.and_then(|t| t.finest_orders()) {
            println!("  {label:8} finest orders: l2 {:.3}  h1 {:.3}  dtl2 {:.3}", o[0], o[1], o[2]);
        }
    }
    if let Some(s) = &report.stability {
        let h2 = &s.stats.mean_h2;
        let h4 = &s.stats.mean_h4;
        let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if h2.len() > 1 {
            println!("  stability max mean H^2 / at n=1: {:.3}, H^4: {:.3}", max(h2) / h2[1], max(h4) / h4[1]);
        }
    }
    if report.max_energy_ratio().is_finite() {
        println!("  max energy residual ratio {:.3e}, failed samples {}", report.max_energy_ratio(), report.n_failed());
    }
    for f in &report.files {
        println!("  wrote {}", f.display());
    }
}

fn run(args: Args) -> Result<RunReport, String> {
    let text = match &args.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?),
        None => None,
    };
    let overrides = Overrides {
        samples: args.samples,
        seed: args.seed,
        tau: args.tau,
        h_level: args.h_level,
        scheme: args.scheme.map(|s| match s {
            Scheme::Implicit => Discretization::FullyImplicit,
            Scheme::Mcn => Discretization::ModifiedCn,
        }),
    };
    let config = resolve(args.preset.as_deref(), args.paper_scale, text.as_deref(), &overrides).map_err(|e| e.to_string())?;
    if args.threads == Some(0) {
        return Err("--threads must be at least 1".into());
    }
    run_experiment(&config, &RunOptions { threads: args.threads, out_dir: Some(args.out) }).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(report) => {
            summarize(&report);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
