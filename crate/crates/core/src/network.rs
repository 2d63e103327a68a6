//! Random communication networks with link failure and min-weight negotiation.
//!
//! Every undirected edge works in a round with probability `θ`, independently of the other
//! edges and of past rounds. On a working edge both endpoints use the smaller of their
//! two proposed weights, and each agent's self-weight absorbs the remaining mass, so each
//! realized `W(k)` is symmetric and doubly stochastic.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest edge count accepted by exact enumeration of link states.
pub const MAX_EXACT_EDGES: usize = 20;

/// Tolerance applied when deciding whether the expected matrix has a spectral gap.
pub const GAP_TOL: f64 = 1e-10;

/// One undirected link with its activation probability and the two proposed weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    /// First endpoint.
    pub i: usize,
    /// Second endpoint.
    pub j: usize,
    /// Probability that the link works in a round.
    pub theta: f64,
    /// Weight agent `i` proposes for `j`.
    pub w_ij: f64,
    /// Weight agent `j` proposes for `i`.
    pub w_ji: f64,
}

impl Edge {
    /// Negotiated weight `min(w_i^j, w_j^i)` used when the link works.
    pub fn weight(&self) -> f64 {
        self.w_ij.min(self.w_ji)
    }
}

/// Graph shapes understood by [`NetworkModel::build`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Topology {
    /// Cycle `0-1-…-(n-1)-0`.
    Ring,
    /// Every pair connected.
    Complete,
    /// Explicit undirected pairs.
    EdgeList {
        /// Pairs `[i, j]` with `i ≠ j`.
        edges: Vec<[usize; 2]>,
    },
    /// No links at all; every agent is isolated.
    Empty,
}

impl Topology {
    /// Undirected pairs `(i, j)` with `i < j`, in a deterministic order.
    pub fn pairs(&self, n: usize) -> Result<Vec<(usize, usize)>> {
        let mut out = match self {
            Self::Ring => match n {
                0 | 1 => vec![],
                2 => vec![(0, 1)],
                _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
            },
            Self::Complete => {
                let mut v = Vec::new();
                for i in 0..n {
                    for j in i + 1..n {
                        v.push((i, j));
                    }
                }
                v
            }
            Self::EdgeList { edges } => edges.iter().map(|e| (e[0], e[1])).collect(),
            Self::Empty => vec![],
        };
        for p in &mut out {
            if p.0 > p.1 {
                *p = (p.1, p.0);
            }
        }
        Ok(out)
    }
}

/// How agents choose their proposed weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum ProposalRule {
    /// `1 / (max(deg_i, deg_j) + 1)` on both sides.
    Metropolis,
    /// The same weight on every directed edge.
    Uniform {
        /// Proposed weight.
        weight: f64,
    },
    /// One `[w_i^j, w_j^i]` pair per edge, in topology order.
    Explicit {
        /// Proposals per edge.
        weights: Vec<[f64; 2]>,
    },
}

/// Link-failure network: agent count plus the undirected edges that may work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    n: usize,
    edges: Vec<Edge>,
}

/// One realized weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSample {
    /// Dense `n × n` realized matrix.
    pub matrix: DMatrix<f64>,
    /// Indices into [`NetworkModel::edges`] of links that worked.
    pub active_edges: Vec<usize>,
}

/// How to evaluate `E{W²}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SquareMode {
    /// Enumerate all `2^|E|` link states; requires at most [`MAX_EXACT_EDGES`] edges.
    Exact,
    /// Average `W²` over sampled rounds.
    MonteCarlo {
        /// Number of sampled rounds.
        samples: usize,
        /// Seed of the sampling stream.
        seed: u64,
    },
    /// Closed form `E{W}² + Σ_e 2θ_e(1−θ_e) w_e² L_e` valid under independent links.
    Analytic,
}

/// Spectral quantities consumed by the stepsize calculus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralReport {
    /// Second largest eigenvalue of `E{W}`.
    pub lambda2_mean: f64,
    /// Smallest eigenvalue of `E{W}`.
    pub lambdan_mean: f64,
    /// Second largest eigenvalue of `E{W²}`.
    pub lambda2_sq: f64,
    /// Certified lower bound on the smallest eigenvalue of every realization.
    pub lambdan_floor: f64,
    /// `ρ(E{W} − 11ᵀ/n)`.
    pub rho_mean_gap: f64,
    /// `ρ(E{W²} − 11ᵀ/n)`.
    pub rho_sq_gap: f64,
    /// `rho_mean_gap < 1`.
    pub connected_in_mean: bool,
}

impl NetworkModel {
    /// Validates and wraps an explicit edge list.
    pub fn new(n: usize, edges: Vec<Edge>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidModel("at least one agent is required".into()));
        }
        let mut seen = std::collections::HashSet::new();
        let mut load = vec![0.0; n];
        for e in &edges {
            if e.i >= n || e.j >= n {
                return Err(Error::InvalidModel(format!(
                    "edge ({}, {}) out of range",
                    e.i, e.j
                )));
            }
            if e.i == e.j {
                return Err(Error::InvalidModel(format!("self-loop at agent {}", e.i)));
            }
            if !seen.insert((e.i.min(e.j), e.i.max(e.j))) {
                return Err(Error::InvalidModel(format!(
                    "duplicate edge ({}, {})",
                    e.i, e.j
                )));
            }
            if !(e.theta > 0.0 && e.theta <= 1.0) {
                return Err(Error::InvalidModel(format!(
                    "theta {} outside (0, 1]",
                    e.theta
                )));
            }
            if !(e.w_ij > 0.0 && e.w_ji > 0.0 && e.w_ij.is_finite() && e.w_ji.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "proposals on edge ({}, {}) must be positive",
                    e.i, e.j
                )));
            }
            load[e.i] += e.weight();
            load[e.j] += e.weight();
        }
        if let Some((i, l)) = load.iter().enumerate().find(|(_, &l)| l >= 1.0) {
            return Err(Error::InvalidModel(format!(
                "agent {i} has total negotiated weight {l} >= 1, self-weight would not be positive"
            )));
        }
        Ok(Self { n, edges })
    }

    /// Builds a model from a topology, one activation probability and a proposal rule.
    pub fn build(n: usize, topology: &Topology, theta: f64, rule: &ProposalRule) -> Result<Self> {
        let pairs = topology.pairs(n)?;
        let mut deg = vec![0usize; n];
        for &(i, j) in &pairs {
            if i >= n || j >= n {
                return Err(Error::InvalidModel(format!("edge ({i}, {j}) out of range")));
            }
            deg[i] += 1;
            deg[j] += 1;
        }
        if let ProposalRule::Explicit { weights } = rule {
            if weights.len() != pairs.len() {
                return Err(Error::InvalidModel(format!(
                    "{} explicit proposals for {} edges",
                    weights.len(),
                    pairs.len()
                )));
            }
        }
        let edges = pairs
            .iter()
            .enumerate()
            .map(|(k, &(i, j))| {
                let (w_ij, w_ji) = match rule {
                    ProposalRule::Metropolis => {
                        let w = 1.0 / (deg[i].max(deg[j]) as f64 + 1.0);
                        (w, w)
                    }
                    ProposalRule::Uniform { weight } => (*weight, *weight),
                    ProposalRule::Explicit { weights } => (weights[k][0], weights[k][1]),
                };
                Edge {
                    i,
                    j,
                    theta,
                    w_ij,
                    w_ji,
                }
            })
            .collect();
        Self::new(n, edges)
    }

    /// Agent count.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Undirected edges.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Same links and proposals with every activation probability replaced.
    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        let edges = self.edges.iter().map(|e| Edge { theta, ..*e }).collect();
        Self::new(self.n, edges)
    }

    /// Whether the graph of all edges is connected.
    pub fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.n];
        for e in &self.edges {
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Realized matrix when exactly the listed edges work.
pub fn negotiate_weights(model: &NetworkModel, active: &[usize]) -> Result<WeightSample> {
    let mut m = DMatrix::identity(model.n, model.n);
    for &idx in active {
        let e = model
            .edges
            .get(idx)
            .ok_or_else(|| Error::InvalidModel(format!("active edge index {idx} out of range")))?;
        let w = e.weight();
        m[(e.i, e.j)] = w;
        m[(e.j, e.i)] = w;
        m[(e.i, e.i)] -= w;
        m[(e.j, e.j)] -= w;
    }
    Ok(WeightSample {
        matrix: m,
        active_edges: active.to_vec(),
    })
}

/// Draws one round of link states and negotiates the resulting matrix.
pub fn sample<R: Rng + ?Sized>(model: &NetworkModel, rng: &mut R) -> WeightSample {
    let active: Vec<usize> = model
        .edges
        .iter()
        .enumerate()
        .filter(|(_, e)| rng.random::<f64>() < e.theta)
        .map(|(k, _)| k)
        .collect();
    negotiate_weights(model, &active).expect("indices come from the model")
}

/// Exact `E{W}` by linearity.
pub fn expected_weight_matrix(model: &NetworkModel) -> DMatrix<f64> {
    let mut m = DMatrix::identity(model.n, model.n);
    for e in &model.edges {
        let w = e.theta * e.weight();
        m[(e.i, e.j)] += w;
        m[(e.j, e.i)] += w;
        m[(e.i, e.i)] -= w;
        m[(e.j, e.j)] -= w;
    }
    m
}

/// `E{W²}` under independent link activations.
pub fn expected_square_matrix(model: &NetworkModel, mode: SquareMode) -> Result<DMatrix<f64>> {
    let n = model.n;
    match mode {
        SquareMode::Exact => {
            let m = model.edges.len();
            if m > MAX_EXACT_EDGES {
                return Err(Error::Capacity {
                    edges: m,
                    max: MAX_EXACT_EDGES,
                });
            }
            let mut acc = DMatrix::zeros(n, n);
            let mut active = Vec::with_capacity(m);
            for mask in 0u32..(1u32 << m) {
                active.clear();
                let mut p = 1.0;
                for (k, e) in model.edges.iter().enumerate() {
                    if mask & (1 << k) != 0 {
                        active.push(k);
                        p *= e.theta;
                    } else {
                        p *= 1.0 - e.theta;
                    }
                }
                if p == 0.0 {
                    continue;
                }
                let w = negotiate_weights(model, &active)?.matrix;
                acc += (&w * &w) * p;
            }
            Ok(acc)
        }
        SquareMode::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::Domain(
                    "monte-carlo mode needs at least one sample".into(),
                ));
            }
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut acc = DMatrix::zeros(n, n);
            for _ in 0..samples {
                let w = sample(model, &mut rng).matrix;
                acc += &w * &w;
            }
            Ok(acc / samples as f64)
        }
        SquareMode::Analytic => {
            let ew = expected_weight_matrix(model);
            let mut acc = &ew * &ew;
            for e in &model.edges {
                let c = 2.0 * e.theta * (1.0 - e.theta) * e.weight() * e.weight();
                acc[(e.i, e.i)] += c;
                acc[(e.j, e.j)] += c;
                acc[(e.i, e.j)] -= c;
                acc[(e.j, e.i)] -= c;
            }
            Ok(acc)
        }
    }
}

/// Eigenvalues of a symmetric matrix sorted in descending order.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Spectral radius of `m − 11ᵀ/n` for symmetric `m`.
pub fn gap_radius(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let shifted = m - DMatrix::from_element(n, n, 1.0 / n as f64);
    sorted_eigenvalues(&shifted)
        .iter()
        .fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Gershgorin lower bound `1 − 2 max_i Σ_j min(w_i^j, w_j^i)` over all realizations.
pub fn lambdan_floor(model: &NetworkModel) -> f64 {
    let mut load = vec![0.0; model.n];
    for e in &model.edges {
        load[e.i] += e.weight();
        load[e.j] += e.weight();
    }
    let worst = load.iter().copied().fold(0.0, f64::max);
    (1.0 - 2.0 * worst).max(-1.0 + 1e-12)
}

/// Spectral summary with `E{W²}` from the closed form.
pub fn spectral_report(model: &NetworkModel) -> SpectralReport {
    let ew = expected_weight_matrix(model);
    let ew2 = expected_square_matrix(model, SquareMode::Analytic).expect("analytic mode is total");
    spectral_report_from(model, &ew, &ew2)
}

/// Spectral summary from precomputed `E{W}` and `E{W²}`.
pub fn spectral_report_from(
    model: &NetworkModel,
    ew: &DMatrix<f64>,
    ew2: &DMatrix<f64>,
) -> SpectralReport {
    let (l2, ln, l2s) = if model.n == 1 {
        (0.0, 0.0, 0.0)
    } else {
        let e1 = sorted_eigenvalues(ew);
        let e2 = sorted_eigenvalues(ew2);
        (e1[1], e1[model.n - 1], e2[1])
    };
    let rho_mean = gap_radius(ew);
    SpectralReport {
        lambda2_mean: l2,
        lambdan_mean: ln,
        lambda2_sq: l2s,
        lambdan_floor: lambdan_floor(model),
        rho_mean_gap: rho_mean,
        rho_sq_gap: gap_radius(ew2),
        connected_in_mean: rho_mean < 1.0 - GAP_TOL,
    }
}
