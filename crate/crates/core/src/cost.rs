//! Agent cost functions, the coupled allocation problem and its closed-form KKT point.
//!
//! Agents jointly minimize `Σ f_i(x_i)` subject to `Σ x_i = Σ d_i`, where every
//! `x_i, d_i ∈ ℝ^u`. Allocations are stored as `n × u` matrices, one row per agent.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interface every agent cost must provide to the engine and the stepsize calculus.
pub trait AgentCost {
    /// Cost at the local allocation `x`.
    fn value(&self, x: &[f64]) -> f64;
    /// Gradient at `x`, written into `out`.
    fn gradient_into(&self, x: &[f64], out: &mut [f64]);
    /// Strong-convexity modulus.
    fn eta(&self) -> f64;
    /// Lipschitz constant of the gradient.
    fn phi(&self) -> f64;
}

/// `f(x) = Σ_c (a x_c² + b x_c + c)` applied per coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCost {
    /// Curvature, strictly positive.
    pub a: f64,
    /// Linear coefficient.
    pub b: f64,
    /// Constant offset.
    #[serde(default)]
    pub c: f64,
}

impl QuadraticCost {
    /// Builds a cost after checking `a > 0` and finiteness.
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(Error::InvalidSpec("non-finite cost coefficient".into()));
        }
        if a <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "curvature a = {a} must be positive"
            )));
        }
        Ok(Self { a, b, c })
    }
}

impl AgentCost for QuadraticCost {
    fn value(&self, x: &[f64]) -> f64 {
        x.iter()
            .map(|&v| self.a * v * v + self.b * v + self.c)
            .sum()
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(x) {
            *o = 2.0 * self.a * v + self.b;
        }
    }

    fn eta(&self) -> f64 {
        2.0 * self.a
    }

    fn phi(&self) -> f64 {
        2.0 * self.a
    }
}

/// Problem instance: one cost and one demand vector per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    costs: Vec<QuadraticCost>,
    demands: DMatrix<f64>,
}

impl CostSpec {
    /// Builds a spec from per-agent costs and an `n × u` demand matrix.
    pub fn new(costs: Vec<QuadraticCost>, demands: DMatrix<f64>) -> Result<Self> {
        if costs.is_empty() {
            return Err(Error::InvalidSpec("at least one agent is required".into()));
        }
        if demands.nrows() != costs.len() {
            return Err(Error::InvalidSpec(format!(
                "{} costs but {} demand rows",
                costs.len(),
                demands.nrows()
            )));
        }
        if demands.ncols() == 0 {
            return Err(Error::InvalidSpec(
                "demand dimension must be at least 1".into(),
            ));
        }
        if demands.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("non-finite demand".into()));
        }
        for (i, c) in costs.iter().enumerate() {
            QuadraticCost::new(c.a, c.b, c.c)
                .map_err(|e| Error::InvalidSpec(format!("agent {i}: {e}")))?;
        }
        Ok(Self { costs, demands })
    }

    /// Scalar-resource convenience constructor (`u = 1`).
    pub fn scalar(costs: Vec<QuadraticCost>, demands: &[f64]) -> Result<Self> {
        let d = DMatrix::from_column_slice(demands.len(), 1, demands);
        Self::new(costs, d)
    }

    /// Number of agents.
    pub fn n(&self) -> usize {
        self.costs.len()
    }

    /// Resource dimension.
    pub fn u(&self) -> usize {
        self.demands.ncols()
    }

    /// Per-agent costs.
    pub fn costs(&self) -> &[QuadraticCost] {
        &self.costs
    }

    /// `n × u` demand matrix.
    pub fn demands(&self) -> &DMatrix<f64> {
        &self.demands
    }

    /// Smallest strong-convexity modulus over agents.
    pub fn eta_lo(&self) -> f64 {
        self.costs
            .iter()
            .map(AgentCost::eta)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest gradient Lipschitz constant over agents.
    pub fn phi_hi(&self) -> f64 {
        self.costs.iter().map(AgentCost::phi).fold(0.0, f64::max)
    }

    /// Stacked gradient `∇f(x)` as an `n × u` matrix.
    pub fn gradient_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(x.nrows(), x.ncols());
        for (i, c) in self.costs.iter().enumerate() {
            for col in 0..x.ncols() {
                g[(i, col)] = 2.0 * c.a * x[(i, col)] + c.b;
            }
        }
        g
    }

    /// Checks that `x` is an `n × u` matrix of finite values.
    pub fn check_shape(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.n() || x.ncols() != self.u() {
            return Err(Error::Domain(format!(
                "expected {}x{} matrix, got {}x{}",
                self.n(),
                self.u(),
                x.nrows(),
                x.ncols()
            )));
        }
        Ok(())
    }
}

/// Optimal allocation and its multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct KktSolution {
    /// `n × u` optimal allocation.
    pub x_star: DMatrix<f64>,
    /// Common marginal cost per coordinate.
    pub mu_star: DVector<f64>,
}

/// Gradient of agent `agent` at local allocation `x`.
pub fn gradient(spec: &CostSpec, agent: usize, x: &[f64]) -> Result<Vec<f64>> {
    if agent >= spec.n() {
        return Err(Error::Domain(format!(
            "agent {agent} out of range 0..{}",
            spec.n()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite allocation".into()));
    }
    let mut out = vec![0.0; x.len()];
    spec.costs[agent].gradient_into(x, &mut out);
    Ok(out)
}

/// Closed-form optimum: `μ* = (Σd_i + Σ b_i/(2a_i)) / Σ 1/(2a_i)`, `x_i* = (μ* − b_i)/(2a_i)`.
pub fn kkt_solve(spec: &CostSpec) -> KktSolution {
    let n = spec.n();
    let u = spec.u();
    let inv_sum: f64 = spec.costs.iter().map(|c| 1.0 / (2.0 * c.a)).sum();
    let b_sum: f64 = spec.costs.iter().map(|c| c.b / (2.0 * c.a)).sum();
    let d_sum: RowDVector<f64> = spec.demands.row_sum();
    let mu = DVector::from_fn(u, |col, _| (d_sum[col] + b_sum) / inv_sum);
    let x = DMatrix::from_fn(n, u, |i, col| {
        let c = &spec.costs[i];
        (mu[col] - c.b) / (2.0 * c.a)
    });
    KktSolution {
        x_star: x,
        mu_star: mu,
    }
}

/// Total cost `Σ f_i(x_i)`.
pub fn global_cost(spec: &CostSpec, x: &DMatrix<f64>) -> Result<f64> {
    spec.check_shape(x)?;
    let mut row = vec![0.0; spec.u()];
    let mut total = 0.0;
    for (i, c) in spec.costs.iter().enumerate() {
        for (col, r) in row.iter_mut().enumerate() {
            *r = x[(i, col)];
        }
        total += c.value(&row);
    }
    Ok(total)
}
