//! Experiment configuration files (TOML) and their resolution into runnable objects.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{kkt_solve, CostSpec, KktSolution, QuadraticCost};
use crate::engine::{Algorithm, DisturbanceKind, DisturbanceSpec, EngineConfig};
use crate::error::{Error, Result};
use crate::network::{spectral_report, NetworkModel, ProposalRule, SpectralReport, Topology};
use crate::stepsize::{
    constants, feasible_region_uncoordinated, optimal_stepsizes, OptimalStepsizes, RateConstants,
    Stepsizes,
};

/// Attempts made when drawing a random uncoordinated plan inside its region.
pub const MAX_PLAN_DRAWS: usize = 100_000;

/// Cost coefficients and demands, inline or loaded from another TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecSection {
    /// Path of a TOML file holding `a`, `b`, `c`, `demands`; relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    /// Curvatures.
    #[serde(default)]
    pub a: Vec<f64>,
    /// Linear coefficients.
    #[serde(default)]
    pub b: Vec<f64>,
    /// Constant offsets; zero when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    /// One row per agent, or one scalar per agent when `u = 1`.
    #[serde(default)]
    pub demands: Demands,
}

/// Demand rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Demands {
    /// Scalar resource.
    Scalar(Vec<f64>),
    /// Vector resource, one row per agent.
    Rows(Vec<Vec<f64>>),
}

impl Default for Demands {
    fn default() -> Self {
        Self::Scalar(Vec::new())
    }
}

/// Network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    /// Graph shape.
    pub topology: Topology,
    /// Link activation probability.
    pub theta: f64,
    /// Proposal rule; Metropolis when omitted.
    #[serde(default = "default_rule")]
    pub proposals: ProposalRule,
}

fn default_rule() -> ProposalRule {
    ProposalRule::Metropolis
}

/// Initial allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    /// `"zero"` or `"demand"`.
    Named(String),
    /// Explicit scalar allocation per agent.
    Scalar(Vec<f64>),
    /// Explicit rows.
    Rows(Vec<Vec<f64>>),
}

/// Engine parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    /// Update rule.
    pub algorithm: Algorithm,
    /// Rounds per replica.
    pub iterations: usize,
    /// Monte-Carlo replicas.
    pub replicas: usize,
    /// Root seed.
    pub seed: u64,
    /// Initial allocation.
    pub x0: InitialState,
    /// Last iteration of the rate window; `iterations` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_e: Option<usize>,
    /// Number of ratios in the rate window.
    #[serde(default = "default_window")]
    pub rate_window: usize,
}

fn default_window() -> usize {
    1000
}

/// Where the stepsizes come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepsizeSource {
    /// Values given in the file.
    Explicit,
    /// Optimal shared pair from the calculator.
    Optimal,
    /// Per-agent values drawn uniformly in multiples of the optimal pair until the
    /// uncoordinated region accepts them.
    RandomUncoordinated,
}

/// Stepsize settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepsizeSection {
    /// Source of the values.
    pub source: StepsizeSource,
    /// Shared `α` for the explicit source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Shared `β` for the explicit source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Per-agent `α_i` for the explicit source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    /// Per-agent `β_i` for the explicit source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    /// `[lo, hi]` multiples of `α_op` for random per-agent plans.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_range: Option<[f64; 2]>,
    /// `[lo, hi]` multiples of `β_op` for random per-agent plans.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_range: Option<[f64; 2]>,
    /// Seed for random per-agent plans.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_seed: Option<u64>,
    /// Baseline stepsize; the shared `β` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wga_alpha: Option<f64>,
}

/// Disturbance settings; `m_zeta` defaults to the initial optimality distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSection {
    /// Entry distribution.
    pub kind: DisturbanceKind,
    /// Envelope magnitude.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_zeta: Option<f64>,
    /// Envelope decay.
    #[serde(default = "default_q")]
    pub q_zeta: f64,
    /// Rounds after which the disturbance is zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<usize>,
}

fn default_q() -> f64 {
    0.999
}

/// Swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Multiples of the base `α`.
    Alpha,
    /// Multiples of the base `β`.
    Beta,
    /// Absolute link activation probabilities; `0` removes every link.
    Theta,
}

impl SweepAxis {
    /// Lower-case name.
    pub fn name(self) -> &'static str {
        match self {
            Self::Alpha => "alpha",
            Self::Beta => "beta",
            Self::Theta => "theta",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(Self::Alpha),
            "beta" => Ok(Self::Beta),
            "theta" => Ok(Self::Theta),
            other => Err(Error::Config(format!("unknown sweep axis '{other}'"))),
        }
    }
}

/// Sweep settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Swept parameter.
    pub axis: SweepAxis,
    /// Values along the axis.
    pub values: Vec<f64>,
}

/// A complete experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Name used for output files.
    pub name: String,
    /// Costs and demands.
    pub spec: SpecSection,
    /// Network.
    pub network: NetworkSection,
    /// Engine.
    pub engine: EngineSection,
    /// Stepsizes.
    pub stepsize: StepsizeSection,
    /// Disturbance, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<DisturbanceSection>,
    /// Sweep, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    /// Directory of the file, used for relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parses TOML text.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Serializes back to TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads and parses a file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Resolves the cost spec, loading the referenced file if any.
    pub fn cost_spec(&self) -> Result<CostSpec> {
        let section = match &self.spec.file {
            Some(f) => {
                let path = self.base_dir.join(f);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                toml::from_str::<SpecSection>(&text).map_err(|e| Error::Config(e.to_string()))?
            }
            None => self.spec.clone(),
        };
        let n = section.a.len();
        if section.b.len() != n {
            return Err(Error::Config(format!(
                "{} curvatures but {} linear coefficients",
                n,
                section.b.len()
            )));
        }
        let c = section.c.clone().unwrap_or_else(|| vec![0.0; n]);
        if c.len() != n {
            return Err(Error::Config(format!(
                "{} curvatures but {} offsets",
                n,
                c.len()
            )));
        }
        let costs = (0..n)
            .map(|i| QuadraticCost::new(section.a[i], section.b[i], c[i]))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Config(e.to_string()))?;
        let demands = rows_to_matrix(&section.demands, n)?;
        CostSpec::new(costs, demands).map_err(|e| Error::Config(e.to_string()))
    }

    /// Network with the configured activation probability.
    pub fn network_model(&self, n: usize) -> Result<NetworkModel> {
        NetworkModel::build(
            n,
            &self.network.topology,
            self.network.theta,
            &self.network.proposals,
        )
        .map_err(|e| Error::Config(e.to_string()))
    }
}

fn rows_to_matrix(d: &Demands, n: usize) -> Result<DMatrix<f64>> {
    match d {
        Demands::Scalar(v) => {
            if v.len() != n {
                return Err(Error::Config(format!(
                    "{} agents but {} demands",
                    n,
                    v.len()
                )));
            }
            Ok(DMatrix::from_column_slice(n, 1, v))
        }
        Demands::Rows(rows) => {
            if rows.len() != n {
                return Err(Error::Config(format!(
                    "{} agents but {} demand rows",
                    n,
                    rows.len()
                )));
            }
            let u = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != u) {
                return Err(Error::Config("demand rows have different lengths".into()));
            }
            Ok(DMatrix::from_fn(n, u, |i, c| rows[i][c]))
        }
    }
}

/// Everything derived from a config before any simulation.
#[derive(Debug, Clone)]
pub struct Resolved {
    /// The parsed file.
    pub config: ExperimentConfig,
    /// Cost spec.
    pub spec: CostSpec,
    /// Closed-form optimum.
    pub kkt: KktSolution,
    /// Network at the configured activation probability.
    pub model: NetworkModel,
    /// Its spectrum.
    pub report: SpectralReport,
    /// Constants, absent when the network is not connected in mean.
    pub constants: Option<RateConstants>,
    /// Optimal pair, absent when the network is not connected in mean.
    pub optimal: Option<OptimalStepsizes>,
    /// Engine settings of the base point.
    pub engine: EngineConfig,
    /// Rate window end.
    pub k_e: usize,
    /// Rate window length.
    pub rate_window: usize,
    /// Baseline stepsize.
    pub wga_alpha: f64,
}

/// Resolves a config into spec, model, stepsizes and engine settings.
pub fn resolve(config: &ExperimentConfig) -> Result<Resolved> {
    let spec = config.cost_spec()?;
    let kkt = kkt_solve(&spec);
    let model = config.network_model(spec.n())?;
    let report = spectral_report(&model);
    let rc = constants(&spec, &report).ok();
    let optimal = rc.as_ref().map(|rc| optimal_stepsizes(rc, &report));
    let st = &config.stepsize;
    let need_optimal = || -> Result<(&RateConstants, &OptimalStepsizes)> {
        match (&rc, &optimal) {
            (Some(rc), Some(op)) => Ok((rc, op)),
            _ => Err(Error::InfeasibleNetwork {
                rho: report.rho_mean_gap,
            }),
        }
    };
    let stepsizes = match st.source {
        StepsizeSource::Explicit => match (st.alpha, st.beta, &st.alphas, &st.betas) {
            (Some(alpha), Some(beta), None, None) => Stepsizes::Shared { alpha, beta },
            (None, None, Some(a), Some(b)) => Stepsizes::Uncoordinated {
                alphas: a.clone(),
                betas: b.clone(),
            },
            _ => {
                return Err(Error::Config(
                    "explicit stepsizes need either alpha and beta, or alphas and betas".into(),
                ))
            }
        },
        StepsizeSource::Optimal => {
            let (_, op) = need_optimal()?;
            Stepsizes::Shared {
                alpha: op.alpha,
                beta: op.beta,
            }
        }
        StepsizeSource::RandomUncoordinated => {
            let (rc, op) = need_optimal()?;
            let ar = st
                .alpha_range
                .ok_or_else(|| Error::Config("alpha_range is required".into()))?;
            let br = st
                .beta_range
                .ok_or_else(|| Error::Config("beta_range is required".into()))?;
            let (alphas, betas) =
                random_uncoordinated_plan(rc, &report, op, ar, br, st.plan_seed.unwrap_or(0))?;
            Stepsizes::Uncoordinated { alphas, betas }
        }
    };
    let algorithm = config.engine.algorithm;
    match (&stepsizes, algorithm) {
        (Stepsizes::Uncoordinated { .. }, Algorithm::DtaUncoordinated) => {}
        (Stepsizes::Shared { .. }, Algorithm::Dta | Algorithm::DtaDisturbed | Algorithm::Wga) => {}
        _ => {
            return Err(Error::Config(format!(
                "stepsizes do not fit algorithm {algorithm:?}"
            )))
        }
    }
    if let Stepsizes::Uncoordinated { alphas, betas } = &stepsizes {
        if alphas.len() != spec.n() || betas.len() != spec.n() {
            return Err(Error::Config(format!(
                "per-agent stepsizes must have {} entries",
                spec.n()
            )));
        }
    }
    let x0 = initial_state(&config.engine.x0, &spec)?;
    let disturbance = match &config.disturbance {
        None => DisturbanceSpec::default(),
        Some(d) => DisturbanceSpec {
            kind: d.kind,
            m_zeta: d.m_zeta.unwrap_or_else(|| (&x0 - &kkt.x_star).norm()),
            q_zeta: d.q_zeta,
            cutoff: d.cutoff,
        },
    };
    disturbance.validate()?;
    let e = &config.engine;
    let k_e = e.k_e.unwrap_or(e.iterations);
    if k_e > e.iterations || e.rate_window == 0 || e.rate_window > k_e {
        return Err(Error::Config(format!(
            "rate window {} ending at {k_e} does not fit {} iterations",
            e.rate_window, e.iterations
        )));
    }
    if e.iterations == 0 || e.replicas == 0 {
        return Err(Error::Config(
            "iterations and replicas must be at least 1".into(),
        ));
    }
    let wga_alpha = st.wga_alpha.unwrap_or(match &stepsizes {
        Stepsizes::Shared { beta, .. } => *beta,
        Stepsizes::Uncoordinated { betas, .. } => betas.iter().sum::<f64>() / betas.len() as f64,
    });
    if let Some(s) = &config.sweep {
        if s.values.is_empty() || s.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(
                "sweep values must be finite and non-negative".into(),
            ));
        }
        if s.axis != SweepAxis::Theta && s.values.iter().any(|v| *v <= 0.0) {
            return Err(Error::Config("stepsize multiples must be positive".into()));
        }
        if s.axis != SweepAxis::Theta && !matches!(stepsizes, Stepsizes::Shared { .. }) {
            return Err(Error::Config(
                "stepsize sweeps need shared stepsizes".into(),
            ));
        }
    }
    let engine = EngineConfig {
        algorithm,
        stepsizes,
        iterations: e.iterations,
        x0,
        seed: e.seed,
        replicas: e.replicas,
        disturbance,
    };
    Ok(Resolved {
        config: config.clone(),
        spec,
        kkt,
        model,
        report,
        constants: rc,
        optimal,
        engine,
        k_e,
        rate_window: e.rate_window,
        wga_alpha,
    })
}

fn initial_state(x0: &InitialState, spec: &CostSpec) -> Result<DMatrix<f64>> {
    let (n, u) = (spec.n(), spec.u());
    let m = match x0 {
        InitialState::Named(s) if s == "zero" => DMatrix::zeros(n, u),
        InitialState::Named(s) if s == "demand" => spec.demands().clone(),
        InitialState::Named(s) => {
            return Err(Error::Config(format!("unknown initial state '{s}'")))
        }
        InitialState::Scalar(v) => rows_to_matrix(&Demands::Scalar(v.clone()), n)?,
        InitialState::Rows(r) => rows_to_matrix(&Demands::Rows(r.clone()), n)?,
    };
    spec.check_shape(&m)
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(m)
}

/// Draws per-agent stepsizes uniformly in `[lo, hi]` multiples of the optimal pair until
/// the uncoordinated region accepts the plan.
pub fn random_uncoordinated_plan(
    rc: &RateConstants,
    report: &SpectralReport,
    op: &OptimalStepsizes,
    alpha_range: [f64; 2],
    beta_range: [f64; 2],
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha20Rng, r: [f64; 2], base: f64| {
        base * (r[0] + (r[1] - r[0]) * rng.random::<f64>())
    };
    for _ in 0..MAX_PLAN_DRAWS {
        let alphas: Vec<f64> = (0..rc.n)
            .map(|_| draw(&mut rng, alpha_range, op.alpha))
            .collect();
        let betas: Vec<f64> = (0..rc.n)
            .map(|_| draw(&mut rng, beta_range, op.beta))
            .collect();
        if feasible_region_uncoordinated(rc, report, &alphas, &betas)?.feasible {
            return Ok((alphas, betas));
        }
    }
    Err(Error::Config(format!(
        "no feasible per-agent plan found in {MAX_PLAN_DRAWS} draws"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"
name = "toy"

[spec]
a = [1.0, 1.0]
b = [0.0, 0.0]
demands = [4.0, 6.0]

[network]
topology = { kind = "complete" }
theta = 0.5
proposals = { rule = "uniform", weight = 0.4 }

[engine]
algorithm = "dta"
iterations = 10
replicas = 2
seed = 1
x0 = "zero"
rate_window = 5

[stepsize]
source = "explicit"
alpha = 0.1
beta = 0.2
"#;

    #[test]
    fn round_trip() {
        let a = ExperimentConfig::from_toml(TOY).unwrap();
        let b = ExperimentConfig::from_toml(&a.to_toml().unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn toy_resolves() {
        let r = resolve(&ExperimentConfig::from_toml(TOY).unwrap()).unwrap();
        assert_eq!(r.spec.n(), 2);
        assert_eq!(r.k_e, 10);
        assert_eq!(
            r.engine.stepsizes,
            Stepsizes::Shared {
                alpha: 0.1,
                beta: 0.2
            }
        );
        assert!((r.wga_alpha - 0.2).abs() < 1e-15);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_shapes() {
        assert!(ExperimentConfig::from_toml(&format!("{TOY}\nbogus = 1\n")).is_err());
        let bad = TOY.replace("demands = [4.0, 6.0]", "demands = [4.0]");
        assert!(resolve(&ExperimentConfig::from_toml(&bad).unwrap()).is_err());
        let bad = TOY.replace("x0 = \"zero\"", "x0 = \"nowhere\"");
        assert!(resolve(&ExperimentConfig::from_toml(&bad).unwrap()).is_err());
        let bad = TOY.replace("rate_window = 5", "rate_window = 50");
        assert!(resolve(&ExperimentConfig::from_toml(&bad).unwrap()).is_err());
    }

    #[test]
    fn optimal_source_needs_connected_network() {
        let cfg = TOY
            .replace("{ kind = \"complete\" }", "{ kind = \"empty\" }")
            .replace(
                "source = \"explicit\"\nalpha = 0.1\nbeta = 0.2",
                "source = \"optimal\"",
            );
        let err = resolve(&ExperimentConfig::from_toml(&cfg).unwrap()).unwrap_err();
        assert!(matches!(err, Error::InfeasibleNetwork { .. }));
    }

    #[test]
    fn disturbance_defaults_to_initial_residual() {
        let cfg =
            TOY.replace("\"dta\"", "\"dta-disturbed\"") + "\n[disturbance]\nkind = \"gaussian\"\n";
        let r = resolve(&ExperimentConfig::from_toml(&cfg).unwrap()).unwrap();
        assert!((r.engine.disturbance.m_zeta - 50f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.engine.disturbance.q_zeta, 0.999);
    }
}
