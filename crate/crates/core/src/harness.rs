//! Experiment driver: bounds reports, sweeps, paired disturbance comparisons, and the
//! CSV/JSON writers.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::{resolve, ExperimentConfig, Resolved, SweepAxis};
use crate::engine::{run, Algorithm, EngineConfig, ReplicaRun};
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate, check_linear_convergence, empirical_rate, is_stalled, ConvergenceCheck,
    RateEstimate, Record, RunTrace,
};
use crate::network::{spectral_report, NetworkModel, SpectralReport, Topology};
use crate::stepsize::{
    constants, feasible_region_shared, feasible_region_uncoordinated, predicted_rate,
    OptimalStepsizes, RateConstants, Stepsizes, Verdict,
};

/// Version of the CSV and JSON output layouts.
pub const SCHEMA_VERSION: u32 = 1;

/// Trace file columns.
pub const CSV_HEADER: [&str; 5] = [
    "k",
    "optimality_distance",
    "feasibility_gap",
    "tracking_norm",
    "gradient_dispersion",
];

/// Largest final-to-initial ratio counted as convergence.
pub const CONVERGENCE_REDUCTION: f64 = 1e-6;

/// Tail length of the log-linear fit.
pub const FIT_TAIL: usize = 5000;

/// Smallest accepted coefficient of determination of that fit.
pub const MIN_R2: f64 = 0.98;

/// Window of the stall flag.
pub const STALL_WINDOW: usize = 10_000;

/// Relative decrease below which a run counts as stalled.
pub const STALL_TOL: f64 = 1e-3;

/// One configuration to simulate.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    /// File-name-safe label.
    pub label: String,
    /// Swept axis, if any.
    pub axis: Option<SweepAxis>,
    /// Value along the axis.
    pub value: Option<f64>,
    /// Network of this point.
    pub model: NetworkModel,
    /// Engine settings of this point.
    pub engine: EngineConfig,
}

/// Summary of one simulated point.
#[derive(Debug, Clone, Serialize)]
pub struct PointSummary {
    /// Label.
    pub label: String,
    /// Swept axis, if any.
    pub axis: Option<SweepAxis>,
    /// Value along the axis.
    pub value: Option<f64>,
    /// Algorithm.
    pub algorithm: Algorithm,
    /// Activation probability, `0` for the link-free network.
    pub theta: f64,
    /// Stepsizes used.
    pub stepsizes: Stepsizes,
    /// Spectrum of this point's network.
    pub spectral: SpectralReport,
    /// Region verdict; absent when the network is not connected in mean.
    pub verdict: Option<Verdict>,
    /// Predicted rate for feasible shared plans.
    pub predicted_rate: Option<f64>,
    /// Empirical rate of the mean-square optimality distance.
    pub rate: Option<RateEstimate>,
    /// Mean-square residuals at `k = 0`.
    pub initial: Option<Record>,
    /// Mean-square residuals at the last iteration.
    pub last: Option<Record>,
    /// Linear-convergence check.
    pub convergence: Option<ConvergenceCheck>,
    /// Whether the optimality distance stalled over the last window.
    pub stalled: Option<bool>,
    /// Divergence message, if the run blew up.
    pub divergence: Option<String>,
    /// Written trace file.
    pub trace_file: Option<String>,
}

/// Result of simulating one point.
#[derive(Debug, Clone)]
pub struct PointOutcome {
    /// Summary.
    pub summary: PointSummary,
    /// Mean-square trace, absent on divergence.
    pub aggregate: Option<RunTrace>,
    /// Per-replica runs, empty on divergence.
    pub replicas: Vec<ReplicaRun>,
}

/// Optimum in plain rows.
#[derive(Debug, Clone, Serialize)]
pub struct KktReport {
    /// `x*`, one row per agent.
    pub x_star: Vec<Vec<f64>>,
    /// `μ*`.
    pub mu_star: Vec<f64>,
}

/// Paired disturbance comparison.
#[derive(Debug, Clone, Serialize)]
pub struct CompareSummary {
    /// Deviation tracking under the disturbance.
    pub dta: PointSummary,
    /// Weighted-gradient baseline under the same draws.
    pub wga: PointSummary,
    /// Baseline stepsize.
    pub wga_alpha: f64,
    /// Per replica, `‖1ᵀx(K) − 1ᵀd‖` of the baseline.
    pub wga_final_gap: Vec<f64>,
    /// Per replica, `‖Σ_k 1ᵀζ(k)‖`.
    pub disturbance_drift: Vec<f64>,
    /// Largest absolute difference between the two lists.
    pub max_drift_mismatch: f64,
    /// Baseline over tracking final mean-square optimality distance.
    pub plateau_ratio: f64,
}

/// Report written by every subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryReport {
    /// Output layout version.
    pub schema_version: u32,
    /// Experiment name.
    pub name: String,
    /// Subcommand.
    pub command: String,
    /// Optimum.
    pub kkt: KktReport,
    /// Spectrum at the configured activation probability.
    pub spectral: SpectralReport,
    /// Constants, absent when not connected in mean.
    pub constants: Option<RateConstants>,
    /// Optimal pair, absent when not connected in mean.
    pub optimal: Option<OptimalStepsizes>,
    /// Whether the optimal pair satisfies the random-network region.
    pub optimal_verdict: Option<Verdict>,
    /// Base stepsizes of the experiment.
    pub stepsizes: Stepsizes,
    /// Region verdict of the base stepsizes.
    pub verdict: Option<Verdict>,
    /// Predicted rate of the base stepsizes.
    pub predicted_rate: Option<f64>,
    /// Simulated points.
    pub points: Vec<PointSummary>,
    /// Paired comparison, for `compare`.
    pub compare: Option<CompareSummary>,
}

impl SummaryReport {
    /// True when at least one point diverged and nothing else failed.
    pub fn has_divergence(&self) -> bool {
        let c = self.compare.as_ref().map(|c| [&c.dta, &c.wga]);
        self.points
            .iter()
            .chain(c.into_iter().flatten())
            .any(|p| p.divergence.is_some())
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn verdict_for(
    spec_rc: Option<&RateConstants>,
    report: &SpectralReport,
    s: &Stepsizes,
) -> (Option<Verdict>, Option<f64>) {
    let Some(rc) = spec_rc else {
        return (None, None);
    };
    match s {
        Stepsizes::Shared { alpha, beta } => (
            Some(feasible_region_shared(rc, report, *alpha, *beta)),
            predicted_rate(rc, report, *alpha, *beta, None).ok(),
        ),
        Stepsizes::Uncoordinated { alphas, betas } => (
            feasible_region_uncoordinated(rc, report, alphas, betas).ok(),
            None,
        ),
    }
}

fn base_report(res: &Resolved, command: &str) -> SummaryReport {
    let (verdict, predicted) =
        verdict_for(res.constants.as_ref(), &res.report, &res.engine.stepsizes);
    let optimal_verdict = match (&res.constants, &res.optimal) {
        (Some(rc), Some(op)) => Some(feasible_region_shared(rc, &res.report, op.alpha, op.beta)),
        _ => None,
    };
    SummaryReport {
        schema_version: SCHEMA_VERSION,
        name: res.config.name.clone(),
        command: command.to_string(),
        kkt: KktReport {
            x_star: matrix_rows(&res.kkt.x_star),
            mu_star: res.kkt.mu_star.iter().copied().collect(),
        },
        spectral: res.report,
        constants: res.constants,
        optimal: res.optimal.clone(),
        optimal_verdict,
        stepsizes: res.engine.stepsizes.clone(),
        verdict,
        predicted_rate: predicted,
        points: Vec::new(),
        compare: None,
    }
}

/// Spectrum, constants, regions and optimal stepsizes without simulating.
pub fn bounds(res: &Resolved) -> SummaryReport {
    base_report(res, "bounds")
}

fn scale_shared(s: &Stepsizes, axis: SweepAxis, v: f64) -> Stepsizes {
    match (s, axis) {
        (Stepsizes::Shared { alpha, beta }, SweepAxis::Alpha) => Stepsizes::Shared {
            alpha: alpha * v,
            beta: *beta,
        },
        (Stepsizes::Shared { alpha, beta }, SweepAxis::Beta) => Stepsizes::Shared {
            alpha: *alpha,
            beta: beta * v,
        },
        (other, _) => other.clone(),
    }
}

/// Points of the configured sweep, or the single base point.
pub fn sweep_points(res: &Resolved) -> Result<Vec<SweepPoint>> {
    let name = &res.config.name;
    let Some(sweep) = &res.config.sweep else {
        return Ok(vec![SweepPoint {
            label: name.clone(),
            axis: None,
            value: None,
            model: res.model.clone(),
            engine: res.engine.clone(),
        }]);
    };
    sweep
        .values
        .iter()
        .enumerate()
        .map(|(idx, &v)| {
            let label = format!("{name}_{}_{idx:02}", sweep.axis.name());
            let (model, engine) = match sweep.axis {
                SweepAxis::Theta => {
                    let model = if v == 0.0 {
                        NetworkModel::build(
                            res.spec.n(),
                            &Topology::Empty,
                            1.0,
                            &res.config.network.proposals,
                        )?
                    } else {
                        res.model.with_theta(v)?
                    };
                    (model, res.engine.clone())
                }
                axis => {
                    let mut e = res.engine.clone();
                    e.stepsizes = scale_shared(&e.stepsizes, axis, v);
                    (res.model.clone(), e)
                }
            };
            Ok(SweepPoint {
                label,
                axis: Some(sweep.axis),
                value: Some(v),
                model,
                engine,
            })
        })
        .collect()
}

/// Runs one point and summarizes it; divergence is recorded, not returned.
pub fn execute_point(res: &Resolved, point: &SweepPoint) -> Result<PointOutcome> {
    let report = spectral_report(&point.model);
    let rc = constants(&res.spec, &report).ok();
    let (verdict, predicted) = verdict_for(rc.as_ref(), &report, &point.engine.stepsizes);
    if let Some(v) = verdict.as_ref().filter(|v| !v.feasible) {
        log::warn!(
            "{}: stepsizes outside the convergence region: {}",
            point.label,
            v.failed.join("; ")
        );
    }
    let theta = point.model.edges().first().map_or(0.0, |e| e.theta);
    let mut summary = PointSummary {
        label: point.label.clone(),
        axis: point.axis,
        value: point.value,
        algorithm: point.engine.algorithm,
        theta,
        stepsizes: point.engine.stepsizes.clone(),
        spectral: report,
        verdict,
        predicted_rate: predicted,
        rate: None,
        initial: None,
        last: None,
        convergence: None,
        stalled: None,
        divergence: None,
        trace_file: None,
    };
    let replicas = match run(&point.engine, &res.spec, &point.model) {
        Ok(r) => r,
        Err(e @ Error::Divergence { .. }) => {
            log::warn!("{}: {e}", point.label);
            summary.divergence = Some(e.to_string());
            return Ok(PointOutcome {
                summary,
                aggregate: None,
                replicas: Vec::new(),
            });
        }
        Err(e) => return Err(e),
    };
    let traces: Vec<RunTrace> = replicas.iter().map(|r| r.trace.clone()).collect();
    let agg = aggregate(&traces)?;
    let opt = agg.optimality();
    summary.rate = empirical_rate(&agg, res.k_e, res.rate_window).ok();
    summary.initial = agg.records.first().copied();
    summary.last = agg.records.last().copied();
    summary.convergence = Some(check_linear_convergence(
        &opt,
        CONVERGENCE_REDUCTION,
        FIT_TAIL.min(opt.len() - 1),
        MIN_R2,
    ));
    summary.stalled = Some(is_stalled(&opt, STALL_WINDOW.min(opt.len() - 1), STALL_TOL));
    Ok(PointOutcome {
        summary,
        aggregate: Some(agg),
        replicas,
    })
}

/// Writes a trace as CSV with [`CSV_HEADER`].
pub fn write_trace_csv(path: &Path, trace: &RunTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for (k, r) in trace.records.iter().enumerate() {
        w.serialize((
            k,
            r.optimality_distance,
            r.feasibility_gap,
            r.tracking_norm,
            r.gradient_dispersion,
        ))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a report as pretty JSON.
pub fn write_summary(path: &Path, report: &SummaryReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn emit(out: Option<&Path>, file: String, outcome: &mut PointOutcome) -> Result<()> {
    if let (Some(dir), Some(agg)) = (out, &outcome.aggregate) {
        let path = dir.join(&file);
        write_trace_csv(&path, agg)?;
        outcome.summary.trace_file = Some(file);
    }
    Ok(())
}

/// Simulates every point; writes one CSV per point and a JSON summary when `out` is given.
pub fn run_experiment(
    res: &Resolved,
    out: Option<&Path>,
) -> Result<(SummaryReport, Vec<PointOutcome>)> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let mut report = base_report(res, "run");
    let mut outcomes = Vec::new();
    for point in sweep_points(res)? {
        let mut o = execute_point(res, &point)?;
        emit(out, format!("{}.csv", point.label), &mut o)?;
        report.points.push(o.summary.clone());
        outcomes.push(o);
    }
    if let Some(dir) = out {
        write_summary(
            &dir.join(format!("{}_summary.json", res.config.name)),
            &report,
        )?;
    }
    Ok((report, outcomes))
}

/// Deviation tracking and the weighted-gradient baseline under identical disturbance draws.
///
/// The baseline starts from `x(0)` shifted uniformly onto `1ᵀx = 1ᵀd`.
pub fn compare(
    res: &Resolved,
    out: Option<&Path>,
) -> Result<(SummaryReport, PointOutcome, PointOutcome)> {
    if res.engine.disturbance.kind == crate::engine::DisturbanceKind::None {
        return Err(Error::Config(
            "compare needs a [disturbance] section".into(),
        ));
    }
    let Stepsizes::Shared { .. } = res.engine.stepsizes else {
        return Err(Error::Config("compare needs shared stepsizes".into()));
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let n = res.spec.n() as f64;
    let shift = (res.engine.x0.row_sum() - res.spec.demands().row_sum()) / n;
    let mut wga_x0 = res.engine.x0.clone();
    for mut row in wga_x0.row_iter_mut() {
        row -= &shift;
    }
    let name = &res.config.name;
    let dta_point = SweepPoint {
        label: format!("{name}_dta"),
        axis: None,
        value: None,
        model: res.model.clone(),
        engine: EngineConfig {
            algorithm: Algorithm::DtaDisturbed,
            ..res.engine.clone()
        },
    };
    let wga_point = SweepPoint {
        label: format!("{name}_wga"),
        axis: None,
        value: None,
        model: res.model.clone(),
        engine: EngineConfig {
            algorithm: Algorithm::Wga,
            stepsizes: Stepsizes::Shared {
                alpha: res.wga_alpha,
                beta: 0.0,
            },
            x0: wga_x0,
            ..res.engine.clone()
        },
    };
    let mut dta = execute_point(res, &dta_point)?;
    let mut wga = execute_point(res, &wga_point)?;
    wga.summary.verdict = None;
    wga.summary.predicted_rate = None;
    emit(out, format!("{}.csv", dta_point.label), &mut dta)?;
    emit(out, format!("{}.csv", wga_point.label), &mut wga)?;
    let wga_final_gap: Vec<f64> = wga
        .replicas
        .iter()
        .map(|r| {
            r.trace
                .records
                .last()
                .map_or(f64::NAN, |x| x.feasibility_gap)
        })
        .collect();
    let drift: Vec<f64> = wga
        .replicas
        .iter()
        .map(|r| r.disturbance_sum.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mismatch = wga_final_gap
        .iter()
        .zip(&drift)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let final_opt = |o: &PointOutcome| o.summary.last.map_or(f64::NAN, |r| r.optimality_distance);
    let mut report = base_report(res, "compare");
    report.compare = Some(CompareSummary {
        dta: dta.summary.clone(),
        wga: wga.summary.clone(),
        wga_alpha: res.wga_alpha,
        wga_final_gap,
        disturbance_drift: drift,
        max_drift_mismatch: mismatch,
        plateau_ratio: final_opt(&wga) / final_opt(&dta),
    });
    if let Some(dir) = out {
        write_summary(&dir.join(format!("{name}_summary.json")), &report)?;
    }
    Ok((report, dta, wga))
}

/// Loads and resolves a config file.
pub fn load(path: &Path) -> Result<Resolved> {
    resolve(&ExperimentConfig::load(path)?)
}

/// Output directory: explicit flag, then `DTA_OUT_DIR`, then `./out`.
pub fn output_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "DTA_OUT_DIR";
