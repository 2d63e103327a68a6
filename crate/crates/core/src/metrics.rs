//! Per-iteration residuals, replica aggregation and empirical rate estimation.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::cost::{CostSpec, KktSolution};
use crate::error::{Error, Result};

/// Residuals of one iterate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Record {
    /// `‖x − x*‖_F`.
    pub optimality_distance: f64,
    /// `‖1ᵀx − 1ᵀd‖`.
    pub feasibility_gap: f64,
    /// `‖y‖_F`; zero for algorithms without a tracking variable.
    pub tracking_norm: f64,
    /// `‖(I − 11ᵀ/n)∇f(x)‖_F`.
    pub gradient_dispersion: f64,
}

impl Record {
    fn fields(&self) -> [f64; 4] {
        [
            self.optimality_distance,
            self.feasibility_gap,
            self.tracking_norm,
            self.gradient_dispersion,
        ]
    }

    fn from_fields(f: [f64; 4]) -> Self {
        Self {
            optimality_distance: f[0],
            feasibility_gap: f[1],
            tracking_norm: f[2],
            gradient_dispersion: f[3],
        }
    }
}

/// Residual history of one replica, or the mean-square aggregate of several.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunTrace {
    /// One record per iteration, starting at `k = 0`.
    pub records: Vec<Record>,
}

impl RunTrace {
    /// Optimality distances in iteration order.
    pub fn optimality(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.optimality_distance).collect()
    }

    /// Number of records.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Whether the trace holds no records.
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Geometric-mean contraction over a window of the optimality distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateEstimate {
    /// Geometric mean of successive ratios; `0` when the residual reached exactly zero.
    pub q_n: f64,
    /// Last iteration of the window.
    pub k_e: usize,
    /// Number of ratios actually used.
    pub n_window: usize,
    /// Set when a zero residual forced the window to shrink.
    pub exact_convergence: bool,
}

/// Residuals of `(x, y)` against the optimum.
pub fn residuals(
    x: &DMatrix<f64>,
    y: Option<&DMatrix<f64>>,
    spec: &CostSpec,
    kkt: &KktSolution,
) -> Record {
    let gap = x.row_sum() - spec.demands().row_sum();
    let g = spec.gradient_matrix(x);
    let mean = g.row_mean();
    let mut disp = 0.0;
    for i in 0..g.nrows() {
        for c in 0..g.ncols() {
            let v = g[(i, c)] - mean[c];
            disp += v * v;
        }
    }
    Record {
        optimality_distance: (x - &kkt.x_star).norm(),
        feasibility_gap: gap.norm(),
        tracking_norm: y.map_or(0.0, |y| y.norm()),
        gradient_dispersion: disp.sqrt(),
    }
}

/// Estimates `q_n = (Π r(k)/r(k−1))^{1/N}` over `k ∈ (k_e − N, k_e]`.
pub fn empirical_rate(trace: &RunTrace, k_e: usize, window: usize) -> Result<RateEstimate> {
    rate_of(&trace.optimality(), k_e, window)
}

/// [`empirical_rate`] over a plain residual sequence.
pub fn rate_of(r: &[f64], k_e: usize, window: usize) -> Result<RateEstimate> {
    if window == 0 || window > k_e {
        return Err(Error::Domain(format!(
            "window {window} must be in 1..={k_e}"
        )));
    }
    if k_e >= r.len() {
        return Err(Error::Domain(format!(
            "k_e = {k_e} beyond trace of length {}",
            r.len()
        )));
    }
    let start = k_e - window;
    let last_zero = (start..=k_e).rev().find(|&k| r[k] == 0.0);
    let (from, exact) = match last_zero {
        None => (start, false),
        Some(z) if z + 1 >= k_e => {
            return Ok(RateEstimate {
                q_n: 0.0,
                k_e,
                n_window: 0,
                exact_convergence: true,
            });
        }
        Some(z) => (z + 1, true),
    };
    let n = k_e - from;
    let q = (r[k_e] / r[from]).powf(1.0 / n as f64);
    Ok(RateEstimate {
        q_n: q,
        k_e,
        n_window: n,
        exact_convergence: exact,
    })
}

/// Root-mean-square over replicas, per iteration and per field.
pub fn aggregate(traces: &[RunTrace]) -> Result<RunTrace> {
    let first = traces
        .first()
        .ok_or_else(|| Error::Domain("no traces to aggregate".into()))?;
    let len = first.len();
    if traces.iter().any(|t| t.len() != len) {
        return Err(Error::Domain("traces have different lengths".into()));
    }
    let r = traces.len() as f64;
    let records = (0..len)
        .map(|k| {
            let mut acc = [0.0; 4];
            for t in traces {
                for (a, v) in acc.iter_mut().zip(t.records[k].fields()) {
                    *a += v * v;
                }
            }
            Record::from_fields(acc.map(|a| (a / r).sqrt()))
        })
        .collect();
    Ok(RunTrace { records })
}

/// Least-squares fit of `ln r(k)` against `k` over `k ∈ [from, to]`; returns `(slope, R²)`.
pub fn log_linear_fit(r: &[f64], from: usize, to: usize) -> Result<(f64, f64)> {
    if from >= to || to >= r.len() {
        return Err(Error::Domain(format!("invalid fit range {from}..={to}")));
    }
    if r[from..=to].iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(
            "fit range contains non-positive or non-finite values".into(),
        ));
    }
    let m = (to - from + 1) as f64;
    let xs = (from..=to).map(|k| k as f64);
    let ys: Vec<f64> = r[from..=to].iter().map(|v| v.ln()).collect();
    let xm = xs.clone().sum::<f64>() / m;
    let ym = ys.iter().sum::<f64>() / m;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, &y) in xs.zip(&ys) {
        sxy += (x - xm) * (y - ym);
        sxx += (x - xm) * (x - xm);
        syy += (y - ym) * (y - ym);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok((slope, r2))
}

/// Linear-convergence check on a residual sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceCheck {
    /// `r(end) / r(0)`.
    pub reduction: f64,
    /// Slope of the log-residual fit over the tail.
    pub slope: f64,
    /// Coefficient of determination of that fit.
    pub r_squared: f64,
    /// `reduction ≤ max_reduction`, `R² ≥ min_r2` and a negative slope.
    pub converged: bool,
}

/// Requires the final residual to be at most `max_reduction` times the initial one and the
/// log-residual over the last `tail` iterations to fit a line with `R² ≥ min_r2`.
pub fn check_linear_convergence(
    r: &[f64],
    max_reduction: f64,
    tail: usize,
    min_r2: f64,
) -> ConvergenceCheck {
    let end = r.len().saturating_sub(1);
    let reduction = if r.is_empty() {
        f64::NAN
    } else {
        r[end] / r[0]
    };
    let (slope, r_squared) = if tail >= 1 && tail <= end {
        log_linear_fit(r, end - tail, end).unwrap_or((f64::NAN, f64::NAN))
    } else {
        (f64::NAN, f64::NAN)
    };
    let converged = reduction <= max_reduction && r_squared >= min_r2 && slope < 0.0;
    ConvergenceCheck {
        reduction,
        slope,
        r_squared,
        converged,
    }
}

/// True when the residual failed to shrink over the last `window` iterations, i.e.
/// `r(end) ≥ (1 − rel_tol)·r(end − window)`.
pub fn is_stalled(r: &[f64], window: usize, rel_tol: f64) -> bool {
    if r.len() <= window {
        return false;
    }
    let end = r.len() - 1;
    r[end] >= (1.0 - rel_tol) * r[end - window]
}
