//! Closed-form convergence bounds for SDE models of SGD.
//!
//! Each evaluator returns the term that forgets the initial condition and
//! the noise-driven variance term separately. Step sizes are
//! `h_t = (t + 1)^{-alpha}` throughout.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::integrate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("invalid bound parameters: {0}")]
    InvalidSpec(String),
    #[error("bound `{family}` is not defined at t = {t}")]
    Domain { family: &'static str, t: f64 },
    #[error("expected a {expected} bound")]
    WrongFamily { expected: &'static str },
}

type Result<T> = std::result::Result<T, BoundError>;

const QUAD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BoundFamily {
    /// No averaging, `a_t = (t + 1)^{1 - alpha}`.
    StepOnly { alpha: f64 },
    /// Polyak-Ruppert averaging with `a_t = t^beta`.
    PrAveraged { alpha: f64, beta: f64 },
    /// Weighted averaging with `u_t = (t + 1)^{-beta}`.
    WeightedAveraged { alpha: f64, beta: f64 },
    /// Second-order SDE with damping `b / t` and `a_t ∝ t^beta`.
    AccDiminishing { alpha: f64, b: f64, beta: f64 },
    /// The `alpha = 3/2, b = 3, beta = 1/2` case in its simplified form
    /// `9/(4 sqrt t) |x0 - x*|² + log t / sqrt t · gamma Tr(Sigma)`.
    AccCanonical,
}

impl BoundFamily {
    pub fn name(&self) -> &'static str {
        match self {
            BoundFamily::StepOnly { .. } => "step_only",
            BoundFamily::PrAveraged { .. } => "pr_averaged",
            BoundFamily::WeightedAveraged { .. } => "weighted_averaged",
            BoundFamily::AccDiminishing { .. } => "acc_diminishing",
            BoundFamily::AccCanonical => "acc_canonical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub gamma: f64,
    pub trace_sigma: f64,
    /// Smoothness constant, used by the step-only variance term.
    pub smoothness: f64,
    /// `|x0 - x*|²`
    pub init_distance_sq: f64,
    /// `f(x0) - f*`
    pub init_gap: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        Self { gamma: 1.0, trace_sigma: 1.0, smoothness: 1.0, init_distance_sq: 1.0, init_gap: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdeBoundSpec {
    pub family: BoundFamily,
    pub constants: BoundConstants,
}

fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(BoundError::InvalidSpec(msg()))
    }
}

fn finite_nonneg(name: &str, v: f64) -> Result<()> {
    require(v.is_finite() && v >= 0.0, || format!("{name} must be finite and >= 0, got {v}"))
}

impl SdeBoundSpec {
    /// Checks the hypotheses under which each bound was derived.
    pub fn new(family: BoundFamily, constants: BoundConstants) -> Result<Self> {
        let c = &constants;
        require(c.gamma > 0.0 && c.gamma.is_finite(), || format!("gamma must be > 0, got {}", c.gamma))?;
        finite_nonneg("trace_sigma", c.trace_sigma)?;
        finite_nonneg("smoothness", c.smoothness)?;
        finite_nonneg("init_distance_sq", c.init_distance_sq)?;
        finite_nonneg("init_gap", c.init_gap)?;
        match family {
            BoundFamily::StepOnly { alpha } => {
                finite_nonneg("alpha", alpha)?;
                require(alpha <= 1.0, || format!("step-only bound needs alpha <= 1, got {alpha}"))?;
            }
            BoundFamily::PrAveraged { alpha, beta } => {
                finite_nonneg("alpha", alpha)?;
                require(beta > 0.0 && beta <= 1.0, || format!("averaging exponent must lie in (0, 1], got {beta}"))?;
                require(alpha + beta <= 1.0, || format!("averaged bound needs alpha + beta <= 1, got {}", alpha + beta))?;
            }
            BoundFamily::WeightedAveraged { alpha, beta } => {
                finite_nonneg("alpha", alpha)?;
                finite_nonneg("beta", beta)?;
                require(alpha <= beta, || format!("weighted averaging of a convex f needs alpha <= beta, got {alpha} > {beta}"))?;
            }
            BoundFamily::AccDiminishing { alpha, b, beta } => {
                require(alpha > 0.0 && alpha.is_finite(), || format!("alpha must be > 0, got {alpha}"))?;
                require(b > 0.0 && b.is_finite(), || format!("damping b must be > 0, got {b}"))?;
                finite_nonneg("beta", beta)?;
                let cap = ((2.0 * b - alpha) / 3.0).min(2.0 - alpha);
                require(beta <= cap, || format!("beta must be <= min((2b - alpha)/3, 2 - alpha) = {cap}, got {beta}"))?;
            }
            BoundFamily::AccCanonical => {}
        }
        Ok(Self { family, constants })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub init_term: f64,
    pub variance_term: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.init_term + self.variance_term
    }
}

/// `(x^k - 1) / k`, continued by `ln x` at `k = 0`.
fn pow_ratio(x: f64, k: f64) -> f64 {
    let l = x.ln();
    if k == 0.0 {
        l
    } else {
        (k * l).exp_m1() / k
    }
}

pub fn evaluate(spec: &SdeBoundSpec, t: f64) -> Result<BoundTerms> {
    match spec.family {
        BoundFamily::StepOnly { .. } => step_only_bound(spec, t),
        BoundFamily::PrAveraged { .. } => pr_averaged_bound(spec, t),
        BoundFamily::WeightedAveraged { .. } => weighted_averaged_bound(spec, t),
        BoundFamily::AccDiminishing { .. } | BoundFamily::AccCanonical => acc_diminishing_bound(spec, t),
    }
}

fn check_t(family: &BoundFamily, t: f64, positive: bool) -> Result<()> {
    if !t.is_finite() || t < 0.0 || (positive && t == 0.0) {
        return Err(BoundError::Domain { family: family.name(), t });
    }
    Ok(())
}

/// No averaging: `|x0 - x*|² / (t + 1)^{1 - alpha}` plus the piecewise
/// variance term (power form for `alpha < 1`, logarithmic for `alpha = 1`).
///
/// The `alpha = 1` form divides by `log t` and is only evaluated for `t > 1`.
pub fn step_only_bound(spec: &SdeBoundSpec, t: f64) -> Result<BoundTerms> {
    let BoundFamily::StepOnly { alpha } = spec.family else {
        return Err(BoundError::WrongFamily { expected: "step_only" });
    };
    check_t(&spec.family, t, false)?;
    let c = &spec.constants;
    let noise = c.gamma * c.trace_sigma;
    let x = t + 1.0;
    if alpha < 1.0 {
        let init_term = c.init_distance_sq / x.powf(1.0 - alpha);
        let inner = c.smoothness * pow_ratio(x, 2.0 - 3.0 * alpha) + 0.5 * pow_ratio(x, 1.0 - 2.0 * alpha);
        return Ok(BoundTerms { init_term, variance_term: noise / x.powf(1.0 - alpha) * inner });
    }
    if t <= 1.0 {
        return Err(BoundError::Domain { family: "step_only", t });
    }
    let tail = integrate(|s| (s + 1.0).ln() / ((s + 1.0) * (s + 1.0)), 0.0, t, QUAD_TOL);
    let inner = c.smoothness * tail + 0.5 * (1.0 - 1.0 / x);
    Ok(BoundTerms { init_term: c.init_distance_sq, variance_term: noise / t.ln() * inner })
}

/// Polyak-Ruppert averaging with `a_t = t^beta`:
/// `|x0 - x*|² / (2 t^beta) + gamma / (2 t^beta) ∫ s^{beta-1} h_s Tr(Sigma) ds`.
pub fn pr_averaged_bound(spec: &SdeBoundSpec, t: f64) -> Result<BoundTerms> {
    let BoundFamily::PrAveraged { alpha, beta } = spec.family else {
        return Err(BoundError::WrongFamily { expected: "pr_averaged" });
    };
    check_t(&spec.family, t, true)?;
    let c = &spec.constants;
    let a = t.powf(beta);
    // u = s^beta removes the endpoint singularity of s^{beta - 1}
    let inv = 1.0 / beta;
    let integral = integrate(|u| (u.powf(inv) + 1.0).powf(-alpha), 0.0, a, QUAD_TOL) / beta;
    Ok(BoundTerms {
        init_term: c.init_distance_sq / (2.0 * a),
        variance_term: c.gamma * c.trace_sigma * integral / (2.0 * a),
    })
}

/// Weighted averaging with `u_t = (t + 1)^{-beta}`:
/// `|x0 - x*|² u_0 / (2 h_0 ∫u) + gamma / (4 ∫u) ∫ u_s h_s Tr(Sigma) ds`.
pub fn weighted_averaged_bound(spec: &SdeBoundSpec, t: f64) -> Result<BoundTerms> {
    let BoundFamily::WeightedAveraged { alpha, beta } = spec.family else {
        return Err(BoundError::WrongFamily { expected: "weighted_averaged" });
    };
    check_t(&spec.family, t, true)?;
    let c = &spec.constants;
    let x = t + 1.0;
    let mass = pow_ratio(x, 1.0 - beta);
    let weighted_steps = pow_ratio(x, 1.0 - alpha - beta);
    Ok(BoundTerms {
        init_term: c.init_distance_sq / (2.0 * mass),
        variance_term: c.gamma * c.trace_sigma * weighted_steps / (4.0 * mass),
    })
}

/// Second-order SDE with diminishing steps:
/// `beta² / t^beta |x0 - x*|² + gamma / (4 t^beta) ∫ s^beta h_s Tr(Sigma) ds`,
/// or the simplified canonical form.
pub fn acc_diminishing_bound(spec: &SdeBoundSpec, t: f64) -> Result<BoundTerms> {
    let c = &spec.constants;
    match spec.family {
        BoundFamily::AccDiminishing { alpha, beta, .. } => {
            check_t(&spec.family, t, true)?;
            let a = t.powf(beta);
            let integral = integrate(|s| s.powf(beta) * (s + 1.0).powf(-alpha), 0.0, t, QUAD_TOL);
            Ok(BoundTerms {
                init_term: beta * beta / a * c.init_distance_sq,
                variance_term: c.gamma * c.trace_sigma * integral / (4.0 * a),
            })
        }
        BoundFamily::AccCanonical => {
            check_t(&spec.family, t, true)?;
            let r = t.sqrt();
            Ok(BoundTerms {
                init_term: 9.0 / (4.0 * r) * c.init_distance_sq,
                variance_term: t.ln() / r * c.gamma * c.trace_sigma,
            })
        }
        _ => Err(BoundError::WrongFamily { expected: "acc_diminishing" }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub t: f64,
    pub init_term: f64,
    pub variance_term: f64,
    pub total: f64,
}

pub fn tabulate(spec: &SdeBoundSpec, times: &[f64]) -> Result<Vec<BoundRow>> {
    times
        .iter()
        .map(|&t| {
            let b = evaluate(spec, t)?;
            Ok(BoundRow { t, init_term: b.init_term, variance_term: b.variance_term, total: b.total() })
        })
        .collect()
}

/// CSV with columns `t,init_term,variance_term,total`.
pub fn write_table(mut out: impl Write, rows: &[BoundRow]) -> std::io::Result<()> {
    writeln!(out, "t,init_term,variance_term,total")?;
    for r in rows {
        writeln!(out, "{:e},{:e},{:e},{:e}", r.t, r.init_term, r.variance_term, r.total)?;
    }
    Ok(())
}
