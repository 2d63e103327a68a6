//! `dta`: runs deviation-tracking allocation experiments from TOML config files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dta_core::config::{resolve, ExperimentConfig, SweepAxis, SweepSection};
use dta_core::harness::{self, SummaryReport, OUT_DIR_ENV};
use dta_core::Error;

/// Exit code for unreadable or invalid configs.
const EXIT_CONFIG: u8 = 2;
/// Exit code for networks that are not connected in mean.
const EXIT_INFEASIBLE: u8 = 3;
/// Exit code when the only failures are diverged sweep points.
const EXIT_DIVERGENCE: u8 = 4;
/// Exit code for any other failure.
const EXIT_OTHER: u8 = 1;

#[derive(Parser)]
#[command(
    name = "dta",
    version,
    about = "Deviation-tracking resource allocation over random networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file.
    config: PathBuf,
    /// Output directory for CSV traces and the JSON summary.
    #[arg(long, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
    /// Overrides the engine seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Prints spectrum, constants, regions and optimal stepsizes as JSON.
    Bounds {
        /// Experiment config file.
        config: PathBuf,
    },
    /// Runs the experiment, including its configured sweep.
    Run(RunArgs),
    /// Runs deviation tracking and the weighted-gradient baseline on identical disturbances.
    Compare(RunArgs),
    /// Runs the experiment over the given sweep instead of the configured one.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Swept parameter: alpha, beta (multiples of the base value) or theta.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

fn load(
    path: &Path,
    seed: Option<u64>,
    sweep: Option<SweepSection>,
) -> dta_core::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.engine.seed = s;
    }
    if sweep.is_some() {
        cfg.sweep = sweep;
    }
    Ok(cfg)
}

fn print_points(report: &SummaryReport) {
    let points = report.compare.as_ref().map_or_else(
        || report.points.clone(),
        |c| vec![c.dta.clone(), c.wga.clone()],
    );
    for p in &points {
        let status = match (&p.divergence, &p.convergence, p.stalled) {
            (Some(_), _, _) => "diverged",
            (_, Some(c), _) if c.converged => "converged",
            (_, _, Some(true)) => "stalled",
            _ => "not converged",
        };
        let q = p
            .rate
            .as_ref()
            .map_or("-".to_string(), |r| format!("{:.6}", r.q_n));
        let last = p.last.map_or("-".to_string(), |r| {
            format!("{:.3e}", r.optimality_distance)
        });
        println!("{:<28} q_n={q:<10} final={last:<10} {status}", p.label);
    }
    if let Some(c) = &report.compare {
        println!(
            "drift mismatch {:.3e}, plateau ratio {:.3e}",
            c.max_drift_mismatch, c.plateau_ratio
        );
    }
}

fn execute(cli: Cli) -> dta_core::Result<SummaryReport> {
    match cli.command {
        Command::Bounds { config } => {
            let res = resolve(&load(&config, None, None)?)?;
            if !res.report.connected_in_mean {
                return Err(Error::InfeasibleNetwork {
                    rho: res.report.rho_mean_gap,
                });
            }
            let report = harness::bounds(&res);
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(report)
        }
        Command::Run(a) => run(&a, None),
        Command::Sweep {
            run: a,
            axis,
            values,
        } => run(&a, Some(SweepSection { axis, values })),
        Command::Compare(a) => {
            let res = resolve(&load(&a.config, a.seed, None)?)?;
            let out = harness::output_dir(a.out.clone());
            let (report, _, _) = harness::compare(&res, Some(&out))?;
            print_points(&report);
            println!("wrote {}", out.display());
            Ok(report)
        }
    }
}

fn run(a: &RunArgs, sweep: Option<SweepSection>) -> dta_core::Result<SummaryReport> {
    let res = resolve(&load(&a.config, a.seed, sweep)?)?;
    let out = harness::output_dir(a.out.clone());
    let (report, _) = harness::run_experiment(&res, Some(&out))?;
    print_points(&report);
    println!("wrote {}", out.display());
    Ok(report)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::InvalidSpec(_)
        | Error::InvalidModel(_)
        | Error::InfeasiblePlan(_) => EXIT_CONFIG,
        Error::InfeasibleNetwork { .. } => EXIT_INFEASIBLE,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        _ => EXIT_OTHER,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(report) if report.has_divergence() => ExitCode::from(EXIT_DIVERGENCE),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
