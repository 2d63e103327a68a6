//! Deviation-tracking iterations, their disturbed and uncoordinated variants, and the
//! weighted-gradient baseline.
//!
//! The matrix-form kernels in this module define the updates. [`agent`] renders the same
//! rounds as per-agent computations that only read neighbor messages.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{kkt_solve, CostSpec};
use crate::error::{Error, Result};
use crate::metrics::{residuals, RunTrace};
use crate::network::{sample, NetworkModel, WeightSample};
use crate::stepsize::Stepsizes;

/// Norm above which a run is declared divergent.
pub const BLOWUP_NORM: f64 = 1e12;

/// Primal and tracking iterates at round `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    /// `n × u` allocation.
    pub x: DMatrix<f64>,
    /// `n × u` deviation tracker.
    pub y: DMatrix<f64>,
    /// Iteration counter.
    pub k: usize,
}

/// Shape of the injected disturbance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceKind {
    /// No disturbance.
    None,
    /// Zero-mean normal entries.
    Gaussian,
    /// Zero-mean Laplace entries.
    Laplace,
    /// Random-sign spikes of full envelope magnitude, switched off after the cutoff.
    Impulse,
}

/// Disturbance envelope `‖ζ(k)‖_E ≤ m_ζ q_ζ^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    /// Entry distribution.
    pub kind: DisturbanceKind,
    /// Envelope magnitude `m_ζ`.
    #[serde(default)]
    pub m_zeta: f64,
    /// Envelope decay `q_ζ ∈ (0, 1)`.
    #[serde(default = "default_q_zeta")]
    pub q_zeta: f64,
    /// Rounds after which the disturbance is zero.
    #[serde(default)]
    pub cutoff: Option<usize>,
}

fn default_q_zeta() -> f64 {
    0.999
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        Self {
            kind: DisturbanceKind::None,
            m_zeta: 0.0,
            q_zeta: default_q_zeta(),
            cutoff: None,
        }
    }
}

impl DisturbanceSpec {
    /// Checks the envelope parameters.
    pub fn validate(&self) -> Result<()> {
        if self.kind == DisturbanceKind::None {
            return Ok(());
        }
        if !(self.m_zeta >= 0.0 && self.m_zeta.is_finite()) {
            return Err(Error::Config(format!(
                "m_zeta = {} must be finite and >= 0",
                self.m_zeta
            )));
        }
        if !(self.q_zeta > 0.0 && self.q_zeta < 1.0) {
            return Err(Error::Config(format!(
                "q_zeta = {} outside (0, 1)",
                self.q_zeta
            )));
        }
        if self.kind == DisturbanceKind::Impulse && self.cutoff.is_none() {
            return Err(Error::Config("impulse disturbance needs a cutoff".into()));
        }
        Ok(())
    }

    /// Whether `ζ(k)` may be nonzero.
    pub fn active_at(&self, k: usize) -> bool {
        self.kind != DisturbanceKind::None && self.cutoff.is_none_or(|c| k < c)
    }

    /// Per-entry scale `(m_ζ / sqrt(n u)) q_ζ^k`.
    pub fn scale(&self, n: usize, u: usize, k: usize) -> f64 {
        self.m_zeta / ((n * u) as f64).sqrt() * self.q_zeta.powf(k as f64)
    }

    /// Draws `ζ(k)`; returns `None` without touching `rng` when inactive.
    pub fn draw<R: Rng + ?Sized>(
        &self,
        n: usize,
        u: usize,
        k: usize,
        rng: &mut R,
    ) -> Option<DMatrix<f64>> {
        if !self.active_at(k) {
            return None;
        }
        let s = self.scale(n, u, k);
        let b = s / std::f64::consts::SQRT_2;
        Some(DMatrix::from_fn(n, u, |_, _| match self.kind {
            DisturbanceKind::Gaussian => s * Distribution::<f64>::sample(&StandardNormal, rng),
            DisturbanceKind::Laplace => {
                let v: f64 = rng.random::<f64>() - 0.5;
                -b * v.signum() * (1.0 - 2.0 * v.abs()).ln()
            }
            DisturbanceKind::Impulse => {
                if rng.random::<bool>() {
                    s
                } else {
                    -s
                }
            }
            DisturbanceKind::None => 0.0,
        }))
    }
}

/// Which update rule to iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Deviation tracking with shared stepsizes.
    Dta,
    /// Deviation tracking with a state disturbance added to `x`.
    DtaDisturbed,
    /// Deviation tracking with per-agent stepsizes.
    DtaUncoordinated,
    /// Weighted-gradient baseline with a state disturbance.
    Wga,
}

/// Everything the engine needs besides the problem and the network.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    /// Update rule.
    pub algorithm: Algorithm,
    /// Stepsizes; the baseline reads its single stepsize from the shared `alpha`.
    pub stepsizes: Stepsizes,
    /// Number of rounds.
    pub iterations: usize,
    /// Initial allocation.
    pub x0: DMatrix<f64>,
    /// Root seed.
    pub seed: u64,
    /// Monte-Carlo replica count.
    pub replicas: usize,
    /// Disturbance applied by the disturbed variants.
    pub disturbance: DisturbanceSpec,
}

/// Output of one replica.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaRun {
    /// Residual history.
    pub trace: RunTrace,
    /// `Σ_k 1ᵀζ(k)` per coordinate.
    pub disturbance_sum: Vec<f64>,
}

/// `y(0) = x(0) − d`.
pub fn init(spec: &CostSpec, x0: &DMatrix<f64>) -> Result<IterateState> {
    spec.check_shape(x0)?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite initial allocation".into()));
    }
    Ok(IterateState {
        x: x0.clone(),
        y: x0 - spec.demands(),
        k: 0,
    })
}

/// `(I−W)v` as `Σ_j W_ij (v_i − v_j)`, which stays accurate when the rows of `v` nearly agree.
pub fn laplacian_apply(w: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let mut out = DMatrix::zeros(n, v.ncols());
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i && w[(i, j)] != 0.0) {
            for c in 0..v.ncols() {
                out[(i, c)] += w[(i, j)] * (v[(i, c)] - v[(j, c)]);
            }
        }
    }
    out
}

fn check_finite(s: IterateState) -> Result<IterateState> {
    let bad = |m: &DMatrix<f64>| m.iter().any(|v| !v.is_finite()) || m.norm() > BLOWUP_NORM;
    if bad(&s.x) || bad(&s.y) {
        return Err(Error::Divergence { replica: 0, k: s.k });
    }
    Ok(s)
}

/// `x⁺ = x − αy − β(I−W)∇f(x)`, `y⁺ = Wy + x⁺ − x`, with `x⁺ − x` applied as one increment.
pub fn dta_step(
    state: &IterateState,
    spec: &CostSpec,
    w: &WeightSample,
    alpha: f64,
    beta: f64,
) -> Result<IterateState> {
    dta_step_disturbed(state, spec, w, alpha, beta, None)
}

/// As [`dta_step`] with `+ζ` in the `x` update only.
pub fn dta_step_disturbed(
    state: &IterateState,
    spec: &CostSpec,
    w: &WeightSample,
    alpha: f64,
    beta: f64,
    zeta: Option<&DMatrix<f64>>,
) -> Result<IterateState> {
    let g = spec.gradient_matrix(&state.x);
    let lg = laplacian_apply(&w.matrix, &g);
    let mut delta = -(&state.y * alpha) - lg * beta;
    if let Some(z) = zeta {
        delta += z;
    }
    let x = &state.x + &delta;
    let y = &state.y - laplacian_apply(&w.matrix, &state.y) + delta;
    check_finite(IterateState {
        x,
        y,
        k: state.k + 1,
    })
}

/// `x⁺ = x − D_α y − D_β(I−W)∇f(x)`, `y⁺ = Wy + x⁺ − x`.
pub fn dta_step_uncoordinated(
    state: &IterateState,
    spec: &CostSpec,
    w: &WeightSample,
    alphas: &[f64],
    betas: &[f64],
) -> Result<IterateState> {
    let n = state.x.nrows();
    if alphas.len() != n || betas.len() != n {
        return Err(Error::Domain(format!("expected {n} per-agent stepsizes")));
    }
    let g = spec.gradient_matrix(&state.x);
    let lg = laplacian_apply(&w.matrix, &g);
    let delta = DMatrix::from_fn(n, state.x.ncols(), |i, c| {
        -(alphas[i] * state.y[(i, c)] + betas[i] * lg[(i, c)])
    });
    let x = &state.x + &delta;
    let y = &state.y - laplacian_apply(&w.matrix, &state.y) + delta;
    check_finite(IterateState {
        x,
        y,
        k: state.k + 1,
    })
}

/// `x⁺ = x + ζ − α(I−W)∇f(x)`; the tracker is left untouched.
pub fn wga_step(
    state: &IterateState,
    spec: &CostSpec,
    w: &WeightSample,
    alpha: f64,
    zeta: Option<&DMatrix<f64>>,
) -> Result<IterateState> {
    let g = spec.gradient_matrix(&state.x);
    let lg = laplacian_apply(&w.matrix, &g);
    let mut x = &state.x - lg * alpha;
    if let Some(z) = zeta {
        x += z;
    }
    check_finite(IterateState {
        x,
        y: state.y.clone(),
        k: state.k + 1,
    })
}

/// Random stream of replica `r`: the root seed selects the key, the replica the stream.
pub fn replica_rng(seed: u64, replica: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(replica as u64);
    rng
}

/// One replica; draws `W(k)` then `ζ(k)` from the same stream every round.
pub fn run_replica(
    cfg: &EngineConfig,
    spec: &CostSpec,
    model: &NetworkModel,
    replica: usize,
) -> Result<ReplicaRun> {
    let kkt = kkt_solve(spec);
    let mut rng = replica_rng(cfg.seed, replica);
    let (n, u) = (spec.n(), spec.u());
    let mut state = init(spec, &cfg.x0)?;
    if cfg.algorithm == Algorithm::Wga {
        state.y = DMatrix::zeros(n, u);
    }
    let tracked = cfg.algorithm != Algorithm::Wga;
    let mut records = Vec::with_capacity(cfg.iterations + 1);
    let mut dsum = vec![0.0; u];
    records.push(residuals(&state.x, tracked.then_some(&state.y), spec, &kkt));
    let disturbed = matches!(cfg.algorithm, Algorithm::DtaDisturbed | Algorithm::Wga);
    for k in 0..cfg.iterations {
        let w = sample(model, &mut rng);
        let zeta = if disturbed {
            cfg.disturbance.draw(n, u, k, &mut rng)
        } else {
            None
        };
        if let Some(z) = &zeta {
            for (c, s) in dsum.iter_mut().enumerate() {
                *s += z.column(c).sum();
            }
        }
        let next = match (&cfg.algorithm, &cfg.stepsizes) {
            (Algorithm::Dta, Stepsizes::Shared { alpha, beta }) => {
                dta_step(&state, spec, &w, *alpha, *beta)
            }
            (Algorithm::DtaDisturbed, Stepsizes::Shared { alpha, beta }) => {
                dta_step_disturbed(&state, spec, &w, *alpha, *beta, zeta.as_ref())
            }
            (Algorithm::DtaUncoordinated, Stepsizes::Uncoordinated { alphas, betas }) => {
                dta_step_uncoordinated(&state, spec, &w, alphas, betas)
            }
            (Algorithm::Wga, Stepsizes::Shared { alpha, .. }) => {
                wga_step(&state, spec, &w, *alpha, zeta.as_ref())
            }
            (a, _) => {
                return Err(Error::Config(format!(
                    "stepsize mode does not match algorithm {a:?}"
                )))
            }
        };
        state = next.map_err(|e| match e {
            Error::Divergence { k, .. } => Error::Divergence { replica, k },
            other => other,
        })?;
        records.push(residuals(&state.x, tracked.then_some(&state.y), spec, &kkt));
    }
    Ok(ReplicaRun {
        trace: RunTrace { records },
        disturbance_sum: dsum,
    })
}

/// All replicas, in replica order; the first divergence (by replica index) is returned as error.
pub fn run(cfg: &EngineConfig, spec: &CostSpec, model: &NetworkModel) -> Result<Vec<ReplicaRun>> {
    if cfg.iterations == 0 || cfg.replicas == 0 {
        return Err(Error::Config(
            "iterations and replicas must be at least 1".into(),
        ));
    }
    if model.n() != spec.n() {
        return Err(Error::Config(format!(
            "network has {} agents, spec has {}",
            model.n(),
            spec.n()
        )));
    }
    cfg.disturbance.validate()?;
    (0..cfg.replicas)
        .into_par_iter()
        .map(|r| run_replica(cfg, spec, model, r))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

pub mod agent {
    //! Per-agent rendering of one round: agent `i` reads only its own state and the
    //! `(∇f_j, y_j)` messages of neighbors whose link worked.

    use nalgebra::DMatrix;

    use crate::cost::{AgentCost, CostSpec};
    use crate::network::NetworkModel;

    use super::IterateState;

    /// Per-agent stepsizes of one round; `track = false` selects the weighted-gradient baseline.
    #[derive(Debug, Clone, Copy)]
    pub struct AgentSteps<'a> {
        /// `α_i`.
        pub alphas: &'a [f64],
        /// `β_i`, or the baseline stepsize.
        pub betas: &'a [f64],
        /// Whether agents carry the deviation tracker.
        pub track: bool,
    }

    /// One synchronous round computed agent by agent.
    pub fn round(
        state: &IterateState,
        spec: &CostSpec,
        model: &NetworkModel,
        active: &[usize],
        steps: AgentSteps<'_>,
        zeta: Option<&DMatrix<f64>>,
    ) -> IterateState {
        let (n, u) = (state.x.nrows(), state.x.ncols());
        let mut inbox: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &idx in active {
            let e = model.edges()[idx];
            inbox[e.i].push((e.j, e.weight()));
            inbox[e.j].push((e.i, e.weight()));
        }
        let grads: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let xj: Vec<f64> = state.x.row(j).iter().copied().collect();
                let mut g = vec![0.0; u];
                spec.costs()[j].gradient_into(&xj, &mut g);
                g
            })
            .collect();
        let mut x = state.x.clone();
        let mut y = state.y.clone();
        for i in 0..n {
            for c in 0..u {
                let mut grad_mix = 0.0;
                let mut y_mix = 0.0;
                for &(j, w) in &inbox[i] {
                    grad_mix += w * (grads[i][c] - grads[j][c]);
                    y_mix += w * (state.y[(j, c)] - state.y[(i, c)]);
                }
                let mut step = -steps.betas[i] * grad_mix;
                if steps.track {
                    step -= steps.alphas[i] * state.y[(i, c)];
                }
                if let Some(z) = zeta {
                    step += z[(i, c)];
                }
                x[(i, c)] = state.x[(i, c)] + step;
                if steps.track {
                    y[(i, c)] = state.y[(i, c)] + y_mix + step;
                }
            }
        }
        IterateState {
            x,
            y,
            k: state.k + 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::QuadraticCost;
    use crate::network::{negotiate_weights, Edge, ProposalRule, Topology};

    fn one_agent() -> (CostSpec, NetworkModel) {
        let spec =
            CostSpec::scalar(vec![QuadraticCost::new(1.0, 0.0, 0.0).unwrap()], &[5.0]).unwrap();
        (spec, NetworkModel::new(1, vec![]).unwrap())
    }

    #[test]
    fn init_examples() {
        let (spec, _) = one_agent();
        let s = init(&spec, &DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(s.y[(0, 0)], -5.0);
        let d = spec.demands().clone();
        assert_eq!(init(&spec, &d).unwrap().y, DMatrix::zeros(1, 1));
        assert!(init(&spec, &DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn scalar_collapse_decays_at_one_minus_alpha() {
        let (spec, model) = one_agent();
        let w = negotiate_weights(&model, &[]).unwrap();
        let mut s = init(&spec, &DMatrix::zeros(1, 1)).unwrap();
        for _ in 0..5 {
            let y0 = s.y[(0, 0)];
            let x0 = s.x[(0, 0)];
            s = dta_step(&s, &spec, &w, 0.3, 0.7).unwrap();
            assert!((s.x[(0, 0)] - (x0 - 0.3 * y0)).abs() < 1e-15);
            assert!((s.y[(0, 0)] - 0.7 * y0).abs() < 1e-14);
        }
    }

    #[test]
    fn fixed_point_is_invariant() {
        let spec = CostSpec::scalar(
            vec![
                QuadraticCost::new(1.0, 0.0, 0.0).unwrap(),
                QuadraticCost::new(2.0, 1.0, 0.0).unwrap(),
            ],
            &[1.0, 3.0],
        )
        .unwrap();
        let model = NetworkModel::new(
            2,
            vec![Edge {
                i: 0,
                j: 1,
                theta: 1.0,
                w_ij: 0.5,
                w_ji: 0.5,
            }],
        )
        .unwrap();
        let w = negotiate_weights(&model, &[0]).unwrap();
        let xs = kkt_solve(&spec).x_star;
        let s = IterateState {
            x: xs.clone(),
            y: DMatrix::zeros(2, 1),
            k: 0,
        };
        let t = dta_step(&s, &spec, &w, 0.2, 0.3).unwrap();
        assert!((t.x - xs).abs().max() < 1e-14);
        assert!(t.y.abs().max() < 1e-14);
    }

    #[test]
    fn zero_disturbance_matches_plain_step() {
        let spec = CostSpec::scalar(
            vec![
                QuadraticCost::new(1.0, 0.0, 0.0).unwrap(),
                QuadraticCost::new(1.0, 0.0, 0.0).unwrap(),
            ],
            &[0.0, 2.0],
        )
        .unwrap();
        let model = NetworkModel::build(
            2,
            &Topology::Complete,
            1.0,
            &ProposalRule::Uniform { weight: 0.5 },
        )
        .unwrap();
        let w = negotiate_weights(&model, &[0]).unwrap();
        let s = init(&spec, &DMatrix::zeros(2, 1)).unwrap();
        let z = DMatrix::zeros(2, 1);
        assert_eq!(
            dta_step(&s, &spec, &w, 0.1, 0.1).unwrap(),
            dta_step_disturbed(&s, &spec, &w, 0.1, 0.1, Some(&z)).unwrap()
        );
        let uc = dta_step_uncoordinated(&s, &spec, &w, &[0.1, 0.1], &[0.1, 0.1]).unwrap();
        assert!(
            (uc.x - dta_step(&s, &spec, &w, 0.1, 0.1).unwrap().x)
                .abs()
                .max()
                < 1e-15
        );
    }

    #[test]
    fn divergence_is_detected() {
        let (spec, model) = one_agent();
        let w = negotiate_weights(&model, &[]).unwrap();
        let s = IterateState {
            x: DMatrix::from_element(1, 1, 1e13),
            y: DMatrix::zeros(1, 1),
            k: 4,
        };
        assert!(matches!(
            dta_step(&s, &spec, &w, 0.1, 0.1),
            Err(Error::Divergence { k: 5, .. })
        ));
    }

    #[test]
    fn disturbance_cutoff_and_scale() {
        let d = DisturbanceSpec {
            kind: DisturbanceKind::Impulse,
            m_zeta: 2.0,
            q_zeta: 0.5,
            cutoff: Some(3),
        };
        let mut rng = replica_rng(1, 0);
        let z = d.draw(4, 1, 1, &mut rng).unwrap();
        assert!((z.norm() - 1.0).abs() < 1e-15);
        assert!(d.draw(4, 1, 3, &mut rng).is_none());
        assert!(DisturbanceSpec::default().draw(4, 1, 0, &mut rng).is_none());
        let bad = DisturbanceSpec { cutoff: None, ..d };
        assert!(bad.validate().is_err());
    }
}
