//! Contraction constants, admissible stepsize regions, optimal stepsizes and predicted rates.
//!
//! Shared stepsizes use one `(α, β)` pair for every agent. Uncoordinated stepsizes give
//! agent `i` its own `(α_i, β_i)`. All feasibility inequalities are strict with margin
//! [`MARGIN`].

use serde::Serialize;

use crate::cost::CostSpec;
use crate::error::{Error, Result};
use crate::network::SpectralReport;

/// Margin applied to every strict inequality.
pub const MARGIN: f64 = 1e-12;

/// Network- and cost-dependent constants that do not depend on the stepsizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateConstants {
    /// Agent count.
    pub n: usize,
    /// Smallest strong-convexity modulus.
    pub eta_lo: f64,
    /// Largest gradient Lipschitz constant.
    pub phi_hi: f64,
    /// Lower contraction constant over the random network.
    pub k1: f64,
    /// Upper contraction constant over the random network.
    pub k2: f64,
    /// Lower contraction constant for a fixed network with the mean spectrum.
    pub k1p: f64,
    /// Upper contraction constant for a fixed network with the mean spectrum.
    pub k2p: f64,
}

/// Stepsize-dependent contractions for a shared plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SharedContractions {
    /// `α² + 2α + λ₂(E{W²})`.
    pub s1: f64,
    /// `sqrt(1 + β²K₂² − 2βK₁)`.
    pub s2: f64,
    /// `max{λ₂(E{W}) − α, α − λₙ(E{W})}`.
    pub s1p: f64,
    /// `max{|1 − βK₁′|, |βK₂′ − 1|}`.
    pub s2p: f64,
}

/// Stepsize-dependent constants for an uncoordinated plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UncoordinatedContractions {
    /// Lower contraction constant with per-agent `β_i`.
    pub k1pp: f64,
    /// Upper contraction constant with per-agent `β_i`.
    pub k2pp: f64,
    /// `1 − Σα_i`.
    pub s4: f64,
    /// `ᾱ² + 2ᾱ + λ₂(E{W²})`.
    pub s5: f64,
    /// `sqrt(1 + K₂″² − 2K₁″)`.
    pub s6: f64,
    /// Largest `α_i`.
    pub alpha_hi: f64,
    /// Smallest `α_i`.
    pub alpha_lo: f64,
    /// Largest `β_i`.
    pub beta_hi: f64,
    /// Smallest `β_i`.
    pub beta_lo: f64,
}

/// Stepsizes handed to the engine.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Stepsizes {
    /// One pair for every agent.
    Shared {
        /// Deviation-feedback stepsize.
        alpha: f64,
        /// Gradient-consensus stepsize.
        beta: f64,
    },
    /// One pair per agent.
    Uncoordinated {
        /// Per-agent `α_i`.
        alphas: Vec<f64>,
        /// Per-agent `β_i`.
        betas: Vec<f64>,
    },
}

/// Outcome of a feasibility check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    /// Whether every condition holds.
    pub feasible: bool,
    /// Human-readable names of the conditions that fail.
    pub failed: Vec<String>,
}

impl Verdict {
    fn from_checks(checks: &[(bool, &str)]) -> Self {
        let failed: Vec<String> = checks
            .iter()
            .filter(|(ok, _)| !ok)
            .map(|(_, name)| (*name).to_string())
            .collect();
        Self {
            feasible: failed.is_empty(),
            failed,
        }
    }
}

/// Stepsizes together with their feasibility verdict and predicted rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepsizePlan {
    /// The stepsizes.
    pub stepsizes: Stepsizes,
    /// Convergence-region verdict.
    pub verdict: Verdict,
    /// Predicted linear rate, present only for feasible shared plans.
    pub predicted_rate: Option<f64>,
}

impl StepsizePlan {
    /// Shared plan checked against the random-network region.
    pub fn shared(
        rc: &RateConstants,
        net: &SpectralReport,
        alpha: f64,
        beta: f64,
        q_zeta: Option<f64>,
    ) -> Self {
        let verdict = feasible_region_shared(rc, net, alpha, beta);
        let predicted_rate = predicted_rate(rc, net, alpha, beta, q_zeta).ok();
        Self {
            stepsizes: Stepsizes::Shared { alpha, beta },
            verdict,
            predicted_rate,
        }
    }

    /// Uncoordinated plan checked against its region.
    pub fn uncoordinated(
        rc: &RateConstants,
        net: &SpectralReport,
        alphas: Vec<f64>,
        betas: Vec<f64>,
    ) -> Result<Self> {
        let verdict = feasible_region_uncoordinated(rc, net, &alphas, &betas)?;
        Ok(Self {
            stepsizes: Stepsizes::Uncoordinated { alphas, betas },
            verdict,
            predicted_rate: None,
        })
    }
}

/// Optimal shared stepsizes and the candidate values they were chosen from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalStepsizes {
    /// Smallest real candidate.
    pub alpha: f64,
    /// `2 / (K₁′ + K₂′)`.
    pub beta: f64,
    /// The four candidates; `None` where the square root is of a negative number.
    pub branches: [Option<f64>; 4],
    /// Index (1-based) of the candidate that attains the minimum.
    pub active_branch: usize,
    /// Diagnostics about dropped candidates.
    pub warnings: Vec<String>,
}

fn lower_constant(eta: f64, phi: f64, n: usize, gap: f64) -> f64 {
    let m = (n - 1) as f64;
    eta * gap * (phi + m * eta) / (n as f64 * (phi * phi + m * eta * eta)).sqrt()
}

/// Stepsize-independent constants.
pub fn constants(spec: &CostSpec, net: &SpectralReport) -> Result<RateConstants> {
    if !net.connected_in_mean {
        return Err(Error::InfeasibleNetwork {
            rho: net.rho_mean_gap,
        });
    }
    let n = spec.n();
    let eta = spec.eta_lo();
    let phi = spec.phi_hi();
    let k1 = lower_constant(eta, phi, n, 1.0 - net.lambda2_mean);
    let k2 = phi * (1.0 - net.lambdan_mean);
    Ok(RateConstants {
        n,
        eta_lo: eta,
        phi_hi: phi,
        k1,
        k2,
        k1p: k1,
        k2p: k2,
    })
}

/// Contractions `s₁, s₂, s₁′, s₂′` for a shared pair.
pub fn shared_contractions(
    rc: &RateConstants,
    net: &SpectralReport,
    alpha: f64,
    beta: f64,
) -> SharedContractions {
    let s1 = alpha * alpha + 2.0 * alpha + net.lambda2_sq;
    let s2 = (1.0 + beta * beta * rc.k2 * rc.k2 - 2.0 * beta * rc.k1)
        .max(0.0)
        .sqrt();
    let s1p = (net.lambda2_mean - alpha).max(alpha - net.lambdan_mean);
    let s2p = (1.0 - beta * rc.k1p).abs().max((beta * rc.k2p - 1.0).abs());
    SharedContractions { s1, s2, s1p, s2p }
}

/// Random-network region: `α < sqrt(2 − λ̄₂ₛ) − 1`, `β < 2K₁/K₂²`,
/// `αβφ̄(1 − λ̲ₙ) < (1 − s₁)(1 − s₂)`.
pub fn feasible_region_shared(
    rc: &RateConstants,
    net: &SpectralReport,
    alpha: f64,
    beta: f64,
) -> Verdict {
    let s = shared_contractions(rc, net, alpha, beta);
    let coupling = alpha * beta * rc.phi_hi * (1.0 - net.lambdan_floor);
    Verdict::from_checks(&[
        (alpha > 0.0, "alpha > 0"),
        (beta > 0.0, "beta > 0"),
        (
            alpha < (2.0 - net.lambda2_sq).sqrt() - 1.0 - MARGIN,
            "alpha < sqrt(2 - lambda2_sq) - 1",
        ),
        (
            beta < 2.0 * rc.k1 / (rc.k2 * rc.k2) - MARGIN,
            "beta < 2 K1 / K2^2",
        ),
        (
            coupling < (1.0 - s.s1) * (1.0 - s.s2) - MARGIN,
            "alpha beta phi (1 - lambdan_floor) < (1 - s1)(1 - s2)",
        ),
    ])
}

/// Fixed-network region: `α < 1 − λ̲ₙₑ`, `β < 1/K₂′`,
/// `αβφ̄(1 − λ̲ₙₑ) < (1 − s₁′)(1 − s₂′)`.
pub fn feasible_region_fixed(
    rc: &RateConstants,
    net: &SpectralReport,
    alpha: f64,
    beta: f64,
) -> Verdict {
    let s = shared_contractions(rc, net, alpha, beta);
    let coupling = alpha * beta * rc.phi_hi * (1.0 - net.lambdan_mean);
    Verdict::from_checks(&[
        (alpha > 0.0, "alpha > 0"),
        (beta > 0.0, "beta > 0"),
        (
            alpha < 1.0 - net.lambdan_mean - MARGIN,
            "alpha < 1 - lambdan_mean",
        ),
        (beta < 1.0 / rc.k2p - MARGIN, "beta < 1 / K2'"),
        (
            coupling < (1.0 - s.s1p) * (1.0 - s.s2p) - MARGIN,
            "alpha beta phi (1 - lambdan_mean) < (1 - s1')(1 - s2')",
        ),
    ])
}

/// Optimal pair from the fixed-network constants.
pub fn optimal_stepsizes(rc: &RateConstants, net: &SpectralReport) -> OptimalStepsizes {
    let (k1, k2) = (rc.k1p, rc.k2p);
    let l2 = net.lambda2_mean;
    let ln = net.lambdan_mean;
    let beta = 2.0 / (k1 + k2);
    let b1 = k1 * (1.0 - l2) / k2;
    let b2 = k1 * (1.0 + ln) / (2.0 * k1 + k2);
    let b3 = 0.5
        * (1.0 + l2 - 2.0 * beta * k2
            + (4.0 * (beta * k2 - 1.0).powi(2) + (1.0 - l2) * (5.0 - l2)).sqrt());
    let disc = (3.0 + ln).powi(2) - 4.0 * beta * k1 * (1.0 + ln);
    let mut warnings = Vec::new();
    let b4 = if disc >= 0.0 {
        Some(0.5 * (3.0 + ln - disc.sqrt()))
    } else {
        let msg = format!("fourth alpha candidate dropped: negative discriminant {disc:e}");
        log::warn!("{msg}");
        warnings.push(msg);
        None
    };
    let branches = [Some(b1), Some(b2), Some(b3), b4];
    let (active, alpha) = branches
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.map(|v| (i + 1, v)))
        .fold(
            (0, f64::INFINITY),
            |acc, (i, v)| if v < acc.1 { (i, v) } else { acc },
        );
    OptimalStepsizes {
        alpha,
        beta,
        branches,
        active_branch: active,
        warnings,
    }
}

/// Random-network rate
/// `max{s₁ + c/(1−s₂), s₂ + c/(1−s₁), |1−α|, q_ζ}` with `c = αβφ̄(1−λ̲ₙ)`.
pub fn predicted_rate(
    rc: &RateConstants,
    net: &SpectralReport,
    alpha: f64,
    beta: f64,
    q_zeta: Option<f64>,
) -> Result<f64> {
    let v = feasible_region_shared(rc, net, alpha, beta);
    if !v.feasible {
        return Err(Error::InfeasiblePlan(v.failed.join("; ")));
    }
    let s = shared_contractions(rc, net, alpha, beta);
    let c = alpha * beta * rc.phi_hi * (1.0 - net.lambdan_floor);
    Ok(rate_max(s.s1, s.s2, c, alpha, q_zeta))
}

/// Fixed-network rate with the primed contractions and `c = αβφ̄(1−λ̲ₙₑ)`.
pub fn predicted_rate_fixed(
    rc: &RateConstants,
    net: &SpectralReport,
    alpha: f64,
    beta: f64,
    q_zeta: Option<f64>,
) -> Result<f64> {
    let v = feasible_region_fixed(rc, net, alpha, beta);
    if !v.feasible {
        return Err(Error::InfeasiblePlan(v.failed.join("; ")));
    }
    let s = shared_contractions(rc, net, alpha, beta);
    let c = alpha * beta * rc.phi_hi * (1.0 - net.lambdan_mean);
    Ok(rate_max(s.s1p, s.s2p, c, alpha, q_zeta))
}

/// Fixed-network rate expression without the region check; `None` unless `s₁′, s₂′ < 1`.
pub fn fixed_rate_expression(
    rc: &RateConstants,
    net: &SpectralReport,
    alpha: f64,
    beta: f64,
    q_zeta: Option<f64>,
) -> Option<f64> {
    let s = shared_contractions(rc, net, alpha, beta);
    if s.s1p >= 1.0 || s.s2p >= 1.0 {
        return None;
    }
    let c = alpha * beta * rc.phi_hi * (1.0 - net.lambdan_mean);
    Some(rate_max(s.s1p, s.s2p, c, alpha, q_zeta))
}

fn rate_max(s1: f64, s2: f64, c: f64, alpha: f64, q_zeta: Option<f64>) -> f64 {
    let base = (s1 + c / (1.0 - s2))
        .max(s2 + c / (1.0 - s1))
        .max((1.0 - alpha).abs());
    q_zeta.map_or(base, |q| base.max(q))
}

/// Constants of the uncoordinated analysis.
pub fn uncoordinated_contractions(
    rc: &RateConstants,
    net: &SpectralReport,
    alphas: &[f64],
    betas: &[f64],
) -> Result<UncoordinatedContractions> {
    if alphas.len() != rc.n || betas.len() != rc.n {
        return Err(Error::Domain(format!(
            "expected {} per-agent stepsizes, got {} alphas and {} betas",
            rc.n,
            alphas.len(),
            betas.len()
        )));
    }
    let hi = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let (a_hi, a_lo, b_hi, b_lo) = (hi(alphas), lo(alphas), hi(betas), lo(betas));
    let (eta, phi) = (rc.eta_lo, rc.phi_hi);
    let m = (rc.n - 1) as f64;
    let k1pp = b_lo * eta * (1.0 - net.lambda2_mean) * (b_hi * phi + m * eta * b_lo)
        / (rc.n as f64 * (b_hi * b_hi * phi * phi + m * eta * eta * b_lo * b_lo)).sqrt();
    let k2pp = b_hi * phi * (1.0 - net.lambdan_mean);
    let s4 = 1.0 - alphas.iter().sum::<f64>();
    let s5 = a_hi * a_hi + 2.0 * a_hi + net.lambda2_sq;
    let s6 = (1.0 + k2pp * k2pp - 2.0 * k1pp).max(0.0).sqrt();
    Ok(UncoordinatedContractions {
        k1pp,
        k2pp,
        s4,
        s5,
        s6,
        alpha_hi: a_hi,
        alpha_lo: a_lo,
        beta_hi: b_hi,
        beta_lo: b_lo,
    })
}

/// Uncoordinated region: `Σα_i < 2`, `ᾱ < sqrt(2 − λ̄₂ₛ) − 1`, `K₂″² < 2K₁″`, `|s₄| < 1`, and
/// `(1−s₄)(1−s₅)(1−s₆) − β̄(1−λ̲ₙ)φ̄ᾱ(2−s₄−s₅) < ᾱ²(1−s₆) + 2ᾱ²β̄(1−λ̲ₙ)φ̄` as stated.
pub fn feasible_region_uncoordinated(
    rc: &RateConstants,
    net: &SpectralReport,
    alphas: &[f64],
    betas: &[f64],
) -> Result<Verdict> {
    let u = uncoordinated_contractions(rc, net, alphas, betas)?;
    let sum: f64 = alphas.iter().sum();
    let g = u.beta_hi * (1.0 - net.lambdan_floor) * rc.phi_hi;
    let lhs = (1.0 - u.s4) * (1.0 - u.s5) * (1.0 - u.s6) - g * u.alpha_hi * (2.0 - u.s4 - u.s5);
    let rhs = u.alpha_hi * u.alpha_hi * (1.0 - u.s6) + 2.0 * u.alpha_hi * u.alpha_hi * g;
    Ok(Verdict::from_checks(&[
        (u.alpha_lo > 0.0, "alpha_i > 0"),
        (u.beta_lo > 0.0, "beta_i > 0"),
        (sum < 2.0 - MARGIN, "sum alpha_i < 2"),
        (
            u.alpha_hi < (2.0 - net.lambda2_sq).sqrt() - 1.0 - MARGIN,
            "max alpha_i < sqrt(2 - lambda2_sq) - 1",
        ),
        (u.k2pp * u.k2pp < 2.0 * u.k1pp - MARGIN, "K2''^2 < 2 K1''"),
        (u.s4.abs() < 1.0 - MARGIN, "|s4| < 1"),
        (lhs < rhs - MARGIN, "coupled inequality on s4, s5, s6"),
    ]))
}
