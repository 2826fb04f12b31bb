//! Certificate checking, multiplier and Lyapunov searches, rate
//! bisection, grid verification of time-dependent certificates and
//! detection of families that only admit the zero Lyapunov function.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lmi::builders::{
    acc_averaged_system, averaged_first_order_system, coef_at, gf_system, push_oscillator_positivity, push_p_psd,
    second_order_system_with_step, third_order_system, weighted_speed, AveragingDynamics,
};
use crate::lmi::derive::{Coef, GramModel, Point};
use crate::lmi::{Affine, LmiError, LmiSystem, Sign};
use crate::model::{
    Averaging, FlowSpec, FunctionClass, LyapunovAnsatz, ModelError, Profile, SecondOrderAveraging, StateLabel,
};
use crate::numerics;
use crate::solver::{minimize_max_eigenvalue, SolveReport, SolverError, Status, Tolerances};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lmi(#[from] LmiError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("a verification grid is required for time-dependent certificates")]
    GridRequired,
    #[error("grid point t = {0} lies outside a profile domain")]
    GridOutsideDomain(f64),
    #[error("multiplier `{0}` is missing from the certificate")]
    MissingMultiplier(String),
    #[error("ansatz shape does not fit the flow: {0}")]
    AnsatzShape(String),
    #[error("unsupported combination: {0}")]
    Unsupported(String),
    #[error("upper bracket tau = {0} is certifiable; raise it")]
    BracketFailure(f64),
    #[error("rate bisection needs mu > 0")]
    NeedsStrongConvexity,
}

type Result<T> = std::result::Result<T, AnalysisError>;

/// How nonnegativity of `V` is imposed for second-order flows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Positivity {
    /// No positivity block.
    #[default]
    None,
    /// `P ⪰ 0` directly.
    PsdP,
    /// Through interpolation multipliers `nu1`, `nu2`.
    Interpolated,
}

/// Log-spaced verification grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridSpec {
    /// `[1e-3, 1e3]` at 400 points per decade.
    pub fn default_time_grid() -> Self {
        Self::per_decade(1e-3, 1e3, 400)
    }

    pub fn per_decade(lo: f64, hi: f64, per_decade: usize) -> Self {
        let points = numerics::log_grid_per_decade(lo, hi, per_decade).len();
        Self { lo, hi, points }
    }

    pub fn times(&self) -> Vec<f64> {
        numerics::log_grid(self.lo, self.hi, self.points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub max_block_eigenvalue: f64,
    pub max_equality_residual: f64,
    pub max_sign_violation: f64,
    /// Time at which the largest block eigenvalue occurs.
    pub argmax_t: Option<f64>,
    pub grid: Option<GridSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub flow: FlowSpec,
    pub class: FunctionClass,
    pub ansatz: LyapunovAnsatz,
    pub rate_tau: f64,
    #[serde(default)]
    pub positivity: Positivity,
    pub multipliers: BTreeMap<String, Profile>,
    #[serde(default)]
    pub residual_summary: Option<ResidualSummary>,
}

impl Certificate {
    pub fn is_time_dependent(&self) -> bool {
        !self.ansatz.is_static() || !self.multipliers.values().all(Profile::is_static) || !flow_is_static(&self.flow)
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    fn multipliers_at(&self, t: f64) -> Result<BTreeMap<String, f64>> {
        self.multipliers
            .iter()
            .map(|(k, p)| Ok((k.clone(), p.eval(t).map_err(|_| AnalysisError::GridOutsideDomain(t))?)))
            .collect()
    }
}

fn flow_is_static(flow: &FlowSpec) -> bool {
    match flow {
        FlowSpec::GradientFlow | FlowSpec::DampedOscillator { .. } => true,
        FlowSpec::NonAutonomousGradientFlow { alpha } => alpha.is_static(),
        FlowSpec::SecondOrderFlow { beta } => beta.is_static(),
        FlowSpec::FirstOrderSde { step, averaging, .. } => step.is_static() && matches!(averaging, Averaging::None),
        FlowSpec::SecondOrderSde { beta, step, averaging, .. } => {
            beta.is_static() && step.is_static() && *averaging == SecondOrderAveraging::None
        }
    }
}

fn expect_shape(ansatz: &LyapunovAnsatz, a_len: usize, basis: &[StateLabel]) -> Result<()> {
    if ansatz.a_terms.len() != a_len || ansatz.state_basis != basis {
        return Err(AnalysisError::AnsatzShape(format!(
            "expected {a_len} value weights over {basis:?}, got {} over {:?}",
            ansatz.a_terms.len(),
            ansatz.state_basis
        )));
    }
    Ok(())
}

fn coef(p: &Profile, t: f64) -> Result<Coef> {
    coef_at(p, t).map_err(|_| AnalysisError::GridOutsideDomain(t))
}

fn eval(p: &Profile, t: f64) -> Result<f64> {
    p.eval(t).map_err(|_| AnalysisError::GridOutsideDomain(t))
}

fn coef_grid(ansatz: &LyapunovAnsatz, t: f64) -> Result<Vec<Vec<Coef>>> {
    ansatz.quad.iter().map(|r| r.iter().map(|p| coef(p, t)).collect()).collect()
}

/// The LMI expressing a certificate at time `t`, with the ansatz fixed.
pub fn certificate_system(cert: &Certificate, t: f64) -> Result<LmiSystem> {
    let ansatz = &cert.ansatz;
    let mu = cert.class.mu();
    let tau = cert.rate_tau;
    use StateLabel::*;
    let sys = match &cert.flow {
        FlowSpec::GradientFlow => {
            expect_shape(ansatz, 1, &[Position])?;
            gf_system(mu, &coef(&ansatz.a_terms[0], t)?, &coef(&ansatz.quad[0][0], t)?, tau, "gradient_flow")
        }
        FlowSpec::NonAutonomousGradientFlow { alpha } => {
            expect_shape(ansatz, 1, &[Position])?;
            let a = coef(&ansatz.a_terms[0], t)?;
            let c = coef(&ansatz.quad[0][0], t)?;
            nonautonomous_system(mu, eval(alpha, t)?, &a, &c, tau)
        }
        FlowSpec::FirstOrderSde { step, averaging: Averaging::None, .. } => {
            expect_shape(ansatz, 1, &[Position])?;
            let a = coef(&ansatz.a_terms[0], t)?;
            let c = coef(&ansatz.quad[0][0], t)?;
            nonautonomous_system(mu, eval(step, t)?, &a, &c, tau)
        }
        FlowSpec::DampedOscillator { beta } | FlowSpec::SecondOrderFlow { beta: Profile::Constant { c: beta } } => {
            second_order_cert_system(cert, mu, *beta, 1.0, t)?
        }
        FlowSpec::SecondOrderFlow { beta } => second_order_cert_system(cert, mu, eval(beta, t)?, 1.0, t)?,
        FlowSpec::SecondOrderSde { beta, step, averaging: SecondOrderAveraging::None, .. } => {
            second_order_cert_system(cert, mu, eval(beta, t)?, eval(step, t)?, t)?
        }
        FlowSpec::FirstOrderSde { step, averaging, .. } => {
            expect_shape(ansatz, 2, &[Position, Average])?;
            if t <= 0.0 {
                return Err(AnalysisError::GridOutsideDomain(t));
            }
            let (speed, on_avg) = match averaging {
                Averaging::PolyakRuppert => (1.0 / t, false),
                Averaging::Primal => (1.0 / t, true),
                Averaging::Weighted { weight } => {
                    (weighted_speed(weight, t).map_err(|_| AnalysisError::GridOutsideDomain(t))?, false)
                }
                Averaging::None => unreachable!(),
            };
            let dynamics = AveragingDynamics { step: eval(step, t)?, speed, gradient_on_average: on_avg };
            let a1 = coef(&ansatz.a_terms[0], t)?;
            let a2 = coef(&ansatz.a_terms[1], t)?;
            averaged_first_order_system(mu, dynamics, &a1, &a2, &coef_grid(ansatz, t)?, "averaged_sde")
        }
        FlowSpec::SecondOrderSde { beta, step, averaging: SecondOrderAveraging::PolyakRuppert, .. } => {
            expect_shape(ansatz, 2, &[Velocity, Position, Average])?;
            if mu != 0.0 {
                return Err(AnalysisError::Unsupported("averaged second-order SDE is analysed for mu = 0".into()));
            }
            if t <= 0.0 {
                return Err(AnalysisError::GridOutsideDomain(t));
            }
            let a1 = coef(&ansatz.a_terms[0], t)?;
            let a2 = coef(&ansatz.a_terms[1], t)?;
            acc_averaged_system(eval(beta, t)?, eval(step, t)?, t, &a1, &a2, &coef_grid(ansatz, t)?, "acc_averaged_sde")
        }
        FlowSpec::SecondOrderSde { averaging: SecondOrderAveraging::Primal, .. } => {
            return Err(AnalysisError::Unsupported("primal averaging of a second-order SDE".into()))
        }
    };
    Ok(sys)
}

fn nonautonomous_system(mu: f64, alpha: f64, a: &Coef, c: &Coef, tau: f64) -> LmiSystem {
    let mut sys = LmiSystem::new("nonautonomous_gradient_flow");
    for name in a.value.variables().chain(a.rate.variables()).chain(c.value.variables()).chain(c.rate.variables()) {
        let name = name.to_string();
        sys.free(&name);
    }
    let l1 = sys.nonneg("lambda1");
    let l2 = sys.nonneg("lambda2");
    let mut gm = GramModel::new(2, mu);
    let x = gm.slot("X", vec![1.0, 0.0], vec![0.0, -alpha], 1);
    gm.state(vec![1.0, 0.0], vec![0.0, -alpha]);
    let b = gm.derivative_block(
        &mut sys,
        "S",
        &[(x, a.clone())],
        &[vec![c.clone()]],
        tau,
        &[(l1, Point::Optimum, x), (l2, x, Point::Optimum)],
    );
    sys.push_block(b);
    sys
}

fn second_order_cert_system(cert: &Certificate, mu: f64, beta: f64, step: f64, t: f64) -> Result<LmiSystem> {
    expect_shape(&cert.ansatz, 1, &[StateLabel::Position, StateLabel::Velocity])?;
    let a = coef(&cert.ansatz.a_terms[0], t)?;
    let p = coef_grid(&cert.ansatz, t)?;
    let mut sys =
        second_order_system_with_step(mu, beta, step, &a, [&p[0][0], &p[0][1], &p[1][1]], cert.rate_tau, "second_order");
    let pv: Vec<Vec<Affine>> = p.iter().map(|r| r.iter().map(|q| q.value.clone()).collect()).collect();
    match cert.positivity {
        Positivity::None => {}
        Positivity::PsdP => push_p_psd(&mut sys, &pv),
        Positivity::Interpolated => push_oscillator_positivity(&mut sys, mu, &a.value, [&pv[0][0], &pv[0][1], &pv[1][1]]),
    }
    Ok(sys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResidual {
    pub t: f64,
    pub max_block_eigenvalue: f64,
    pub max_equality_residual: f64,
    pub sign_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub certified: bool,
    pub summary: ResidualSummary,
    pub points: Vec<PointResidual>,
}

fn check_point(cert: &Certificate, t: f64) -> Result<PointResidual> {
    let sys = certificate_system(cert, t)?;
    let values = cert.multipliers_at(t)?;
    for v in &sys.variables {
        if !values.contains_key(&v.name) {
            return Err(AnalysisError::MissingMultiplier(v.name.clone()));
        }
    }
    let blocks = sys.block_residuals(&values);
    let eqs = sys.equality_residuals(&values);
    Ok(PointResidual {
        t,
        max_block_eigenvalue: blocks.into_iter().fold(f64::NEG_INFINITY, f64::max),
        max_equality_residual: eqs.into_iter().fold(0.0, f64::max),
        sign_violation: sys.sign_violation(&values),
    })
}

/// Evaluate a certificate's LMI at one time (static) or on every grid point.
pub fn check_certificate(cert: &Certificate, grid: Option<&GridSpec>) -> Result<CheckReport> {
    check_certificate_with(cert, grid, &Tolerances::default())
}

pub fn check_certificate_with(cert: &Certificate, grid: Option<&GridSpec>, tol: &Tolerances) -> Result<CheckReport> {
    let times = match grid {
        Some(g) => g.times(),
        None if cert.is_time_dependent() => return Err(AnalysisError::GridRequired),
        None => vec![1.0],
    };
    let points: Vec<PointResidual> = times.par_iter().map(|&t| check_point(cert, t)).collect::<Result<_>>()?;
    let (mut worst, mut arg) = (f64::NEG_INFINITY, None);
    for p in &points {
        if p.max_block_eigenvalue > worst {
            worst = p.max_block_eigenvalue;
            arg = Some(p.t);
        }
    }
    let max_eq = points.iter().map(|p| p.max_equality_residual).fold(0.0, f64::max);
    let max_sign = points.iter().map(|p| p.sign_violation).fold(0.0, f64::max);
    let summary = ResidualSummary {
        max_block_eigenvalue: worst,
        max_equality_residual: max_eq,
        max_sign_violation: max_sign,
        argmax_t: if grid.is_some() { arg } else { None },
        grid: grid.copied(),
    };
    let certified = worst <= tol.feasibility && max_eq <= tol.equality && max_sign <= tol.equality;
    Ok(CheckReport { certified, summary, points })
}

/// Result of a feasibility search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Search<T> {
    Found(T),
    Infeasible { objective: f64, report: Box<SolveReport> },
}

impl<T> Search<T> {
    pub fn found(self) -> Option<T> {
        match self {
            Search::Found(x) => Some(x),
            Search::Infeasible { .. } => None,
        }
    }

    pub fn is_found(&self) -> bool {
        matches!(self, Search::Found(_))
    }
}

/// Look for multipliers making a fixed-ansatz system feasible.
pub fn search_multipliers(lmi: &LmiSystem) -> Result<Search<SolveReport>> {
    let report = minimize_max_eigenvalue(lmi)?;
    Ok(if report.status == Status::Feasible {
        Search::Found(report)
    } else {
        Search::Infeasible { objective: report.objective, report: Box::new(report) }
    })
}

fn joint_system(flow: &FlowSpec, class: &FunctionClass, tau: f64, enforce_p_psd: bool) -> Result<(LmiSystem, Positivity)> {
    let mu = class.mu();
    match flow {
        FlowSpec::GradientFlow => {
            let c = Affine::var("c");
            let mut sys = gf_system(mu, &Coef::fixed(1.0, 0.0), &Coef::static_unknown(c), tau, "gradient_flow_search");
            sys.declare("c", Sign::Nonnegative);
            Ok((sys, Positivity::None))
        }
        FlowSpec::DampedOscillator { beta } => {
            let p: Vec<Coef> = ["p11", "p12", "p22"].iter().map(|n| Coef::static_unknown(Affine::var(n))).collect();
            let mut sys = second_order_system_with_step(
                mu,
                *beta,
                1.0,
                &Coef::fixed(1.0, 0.0),
                [&p[0], &p[1], &p[2]],
                tau,
                "oscillator_search",
            );
            let pv: Vec<Affine> = p.iter().map(|q| q.value.clone()).collect();
            let positivity = if enforce_p_psd {
                push_p_psd(&mut sys, &[vec![pv[0].clone(), pv[1].clone()], vec![pv[1].clone(), pv[2].clone()]]);
                Positivity::PsdP
            } else {
                push_oscillator_positivity(&mut sys, mu, &Affine::constant(1.0), [&pv[0], &pv[1], &pv[2]]);
                Positivity::Interpolated
            };
            Ok((sys, positivity))
        }
        other => Err(AnalysisError::Unsupported(format!("joint Lyapunov search needs an autonomous flow, got {other:?}"))),
    }
}

fn certificate_from(flow: &FlowSpec, class: &FunctionClass, tau: f64, positivity: Positivity, report: &SolveReport) -> Certificate {
    let ansatz = match flow {
        FlowSpec::GradientFlow => {
            LyapunovAnsatz::constant(&[1.0], &[vec![report.value("c")]], vec![StateLabel::Position]).unwrap()
        }
        _ => {
            let (p11, p12, p22) = (report.value("p11"), report.value("p12"), report.value("p22"));
            LyapunovAnsatz::constant(
                &[1.0],
                &[vec![p11, p12], vec![p12, p22]],
                vec![StateLabel::Position, StateLabel::Velocity],
            )
            .unwrap()
        }
    };
    let multipliers = report
        .assignment
        .iter()
        .filter(|(k, _)| k.starts_with("lambda") || k.starts_with("nu"))
        .map(|(k, v)| (k.clone(), Profile::constant(*v)))
        .collect();
    let max_eq = report.equality_residuals.iter().copied().fold(0.0, f64::max);
    Certificate {
        flow: flow.clone(),
        class: *class,
        ansatz,
        rate_tau: tau,
        positivity,
        multipliers,
        residual_summary: Some(ResidualSummary {
            max_block_eigenvalue: report.objective,
            max_equality_residual: max_eq,
            max_sign_violation: 0.0,
            argmax_t: None,
            grid: None,
        }),
    }
}

/// Joint search over the Lyapunov parameters and multipliers at rate `tau`,
/// with the normalisation `a = 1`.
pub fn search_lyapunov(flow: &FlowSpec, class: &FunctionClass, tau: f64, enforce_p_psd: bool) -> Result<Search<Certificate>> {
    let (sys, positivity) = joint_system(flow, class, tau, enforce_p_psd)?;
    let report = minimize_max_eigenvalue(&sys)?;
    Ok(if report.status == Status::Feasible {
        Search::Found(certificate_from(flow, class, tau, positivity, &report))
    } else {
        Search::Infeasible { objective: report.objective, report: Box::new(report) }
    })
}

/// `true` when the joint system at `tau` is strictly feasible (or unbounded).
fn admits(flow: &FlowSpec, class: &FunctionClass, tau: f64, enforce_p_psd: bool) -> Result<bool> {
    let (sys, _) = joint_system(flow, class, tau, enforce_p_psd)?;
    match minimize_max_eigenvalue(&sys) {
        Ok(r) => Ok(r.admits_certificate()),
        Err(SolverError::Unbounded { .. }) => Ok(true),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bisection {
    pub tau_star: f64,
    pub certificate: Certificate,
    /// Every probed rate with its verdict, in probing order.
    pub trace: Vec<(f64, bool)>,
}

/// Default upper bracket `4 (sqrt(mu) + mu)`.
pub fn default_tau_hi(mu: f64) -> f64 {
    4.0 * (mu.sqrt() + mu)
}

/// Largest certifiable rate to absolute accuracy `1e-6` (tighter for small brackets).
pub fn bisect_rate(flow: &FlowSpec, class: &FunctionClass, enforce_p_psd: bool, tau_hi: f64) -> Result<Bisection> {
    if class.mu() <= 0.0 {
        return Err(AnalysisError::NeedsStrongConvexity);
    }
    let mut trace = Vec::new();
    let hi_ok = admits(flow, class, tau_hi, enforce_p_psd)?;
    trace.push((tau_hi, hi_ok));
    if hi_ok {
        return Err(AnalysisError::BracketFailure(tau_hi));
    }
    let (mut lo, mut hi) = (0.0, tau_hi);
    let tol = 1e-6 * tau_hi.min(1.0);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let ok = admits(flow, class, mid, enforce_p_psd)?;
        trace.push((mid, ok));
        if ok {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let certificate = match search_lyapunov(flow, class, lo, enforce_p_psd)? {
        Search::Found(c) => c,
        Search::Infeasible { report, .. } => {
            let (_, positivity) = joint_system(flow, class, lo, enforce_p_psd)?;
            certificate_from(flow, class, lo, positivity, &report)
        }
    };
    Ok(Bisection { tau_star: 0.5 * (lo + hi), certificate, trace })
}

/// Closed-form reference rate for the rate sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateFamily {
    GradientFlow,
    OscillatorPsd,
    OscillatorRelaxed,
}

impl RateFamily {
    pub fn flow(&self, mu: f64) -> FlowSpec {
        match self {
            RateFamily::GradientFlow => FlowSpec::GradientFlow,
            _ => FlowSpec::DampedOscillator { beta: 2.0 * mu.sqrt() },
        }
    }

    pub fn enforce_p_psd(&self) -> bool {
        matches!(self, RateFamily::OscillatorPsd)
    }

    pub fn reference(&self, mu: f64) -> f64 {
        match self {
            RateFamily::GradientFlow => 2.0 * mu,
            RateFamily::OscillatorPsd => mu.sqrt(),
            RateFamily::OscillatorRelaxed => 4.0 / 3.0 * mu.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSweepRow {
    pub mu: f64,
    pub tau_pep: f64,
    pub tau_reference: f64,
    pub relative_gap: f64,
}

/// Bisect the rate at each `mu`; rows come back in input order.
pub fn rate_sweep(family: RateFamily, mus: &[f64]) -> Result<Vec<RateSweepRow>> {
    mus.par_iter()
        .map(|&mu| {
            let class = FunctionClass::strongly_convex(mu)?;
            let b = bisect_rate(&family.flow(mu), &class, family.enforce_p_psd(), default_tau_hi(mu))?;
            let reference = family.reference(mu);
            Ok(RateSweepRow {
                mu,
                tau_pep: b.tau_star,
                tau_reference: reference,
                relative_gap: (b.tau_star - reference) / reference,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovRow {
    pub mu: f64,
    pub p11: f64,
    pub p12: f64,
    pub p22: f64,
}

/// Relaxed oscillator search at `tau = 4/3 sqrt(mu)` with `a = 1`.
pub fn lyapunov_sweep(mus: &[f64]) -> Result<Vec<LyapunovRow>> {
    mus.par_iter()
        .map(|&mu| {
            let class = FunctionClass::strongly_convex(mu)?;
            let flow = FlowSpec::DampedOscillator { beta: 2.0 * mu.sqrt() };
            let tau = 4.0 / 3.0 * mu.sqrt();
            let (sys, _) = joint_system(&flow, &class, tau, false)?;
            let r = minimize_max_eigenvalue(&sys)?;
            Ok(LyapunovRow { mu, p11: r.value("p11"), p12: r.value("p12"), p22: r.value("p22") })
        })
        .collect()
}

/// Certificates known in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceCertificate {
    /// `V = f - f*` at rate `2 mu`.
    GradientFlow,
    /// `V = f - f* + 1/2 |sqrt(mu)(X - x*) + X'|²` at rate `sqrt(mu)`.
    OscillatorSqrtMu,
    /// `P = [[4mu/9, 2sqrt(mu)/3], [2sqrt(mu)/3, 1/2]]` at rate `4/3 sqrt(mu)`.
    OscillatorFourThirds,
    /// `V = t² (f - f*) + 2 |X - x* + t X'/2|²` for `X'' + 3/t X' + ∇f = 0`.
    AcceleratedFlow,
}

impl ReferenceCertificate {
    pub const ALL: [ReferenceCertificate; 4] = [
        ReferenceCertificate::GradientFlow,
        ReferenceCertificate::OscillatorSqrtMu,
        ReferenceCertificate::OscillatorFourThirds,
        ReferenceCertificate::AcceleratedFlow,
    ];

    /// Grid the certificate is checked on; `None` for static ones.
    pub fn grid(&self) -> Option<GridSpec> {
        match self {
            ReferenceCertificate::AcceleratedFlow => Some(GridSpec { lo: 1e-2, hi: 1e3, points: 400 }),
            _ => None,
        }
    }

    /// The certificate for strong convexity `mu` (ignored by the accelerated flow, which uses `mu = 0`).
    pub fn build(&self, mu: f64) -> Result<Certificate> {
        use StateLabel::*;
        let k = Profile::constant;
        let s = mu.sqrt();
        let oscillator = |tau: f64, p: [f64; 3]| -> Result<Certificate> {
            Ok(Certificate {
                flow: FlowSpec::damped_oscillator(2.0 * s)?,
                class: FunctionClass::strongly_convex(mu)?,
                ansatz: LyapunovAnsatz::constant(&[1.0], &[vec![p[0], p[1]], vec![p[1], p[2]]], vec![Position, Velocity])?,
                rate_tau: tau,
                positivity: Positivity::Interpolated,
                multipliers: [("lambda1", k(tau)), ("lambda2", k(0.0)), ("nu1", k(0.0)), ("nu2", k(1.0))]
                    .into_iter()
                    .map(|(n, p)| (n.to_string(), p))
                    .collect(),
                residual_summary: None,
            })
        };
        match self {
            ReferenceCertificate::GradientFlow => Ok(Certificate {
                flow: FlowSpec::GradientFlow,
                class: FunctionClass::strongly_convex(mu)?,
                ansatz: LyapunovAnsatz::constant(&[1.0], &[vec![0.0]], vec![Position])?,
                rate_tau: 2.0 * mu,
                positivity: Positivity::None,
                multipliers: [("lambda1".to_string(), k(2.0 * mu)), ("lambda2".to_string(), k(0.0))].into(),
                residual_summary: None,
            }),
            ReferenceCertificate::OscillatorSqrtMu => oscillator(s, [mu / 2.0, s / 2.0, 0.5]),
            ReferenceCertificate::OscillatorFourThirds => oscillator(4.0 / 3.0 * s, [4.0 * mu / 9.0, 2.0 * s / 3.0, 0.5]),
            ReferenceCertificate::AcceleratedFlow => Ok(Certificate {
                flow: FlowSpec::SecondOrderFlow { beta: Profile::reciprocal(3.0) },
                class: FunctionClass::convex(),
                ansatz: LyapunovAnsatz::new(
                    vec![Profile::monomial(1.0, 2.0)],
                    vec![
                        vec![k(2.0), Profile::monomial(1.0, 1.0)],
                        vec![Profile::monomial(1.0, 1.0), Profile::monomial(0.5, 2.0)],
                    ],
                    vec![Position, Velocity],
                )?,
                rate_tau: 0.0,
                positivity: Positivity::PsdP,
                multipliers: [("lambda1".to_string(), Profile::monomial(2.0, 1.0)), ("lambda2".to_string(), k(0.0))].into(),
                residual_summary: None,
            }),
        }
    }
}

/// Time-dependent families verified on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SublinearFamily {
    /// Convex gradient flow with `V = a_t (f - f*) + c_t |X - x*|²`.
    ConvexGradientFlow { a: Profile, c: Profile },
    /// `X' = -alpha_t ∇f` with the same ansatz shape.
    NonAutonomousGradientFlow { alpha: Profile, a: Profile, c: Profile },
    /// `X'' + beta_t X' + ∇f = 0` with `P_t` over `(X - x*, X')`.
    SecondOrderFlow { beta: Profile, a: Profile, p: Vec<Vec<Profile>> },
    /// Averaged first-order SDE drift.
    AveragedSde { step: Profile, averaging: Averaging, a1: Profile, a2: Profile, p: Vec<Vec<Profile>> },
}

impl SublinearFamily {
    fn certificate(&self, multipliers: BTreeMap<String, Profile>) -> Result<Certificate> {
        use StateLabel::*;
        let (flow, ansatz) = match self {
            SublinearFamily::ConvexGradientFlow { a, c } => (
                FlowSpec::GradientFlow,
                LyapunovAnsatz::new(vec![a.clone()], vec![vec![c.clone()]], vec![Position])?,
            ),
            SublinearFamily::NonAutonomousGradientFlow { alpha, a, c } => (
                FlowSpec::NonAutonomousGradientFlow { alpha: alpha.clone() },
                LyapunovAnsatz::new(vec![a.clone()], vec![vec![c.clone()]], vec![Position])?,
            ),
            SublinearFamily::SecondOrderFlow { beta, a, p } => (
                FlowSpec::SecondOrderFlow { beta: beta.clone() },
                LyapunovAnsatz::new(vec![a.clone()], p.clone(), vec![Position, Velocity])?,
            ),
            SublinearFamily::AveragedSde { step, averaging, a1, a2, p } => (
                FlowSpec::FirstOrderSde {
                    step: step.clone(),
                    gamma: 1.0,
                    trace_sigma: 0.0,
                    smoothness: crate::model::Smoothness::Infinite,
                    averaging: averaging.clone(),
                },
                LyapunovAnsatz::new(vec![a1.clone(), a2.clone()], p.clone(), vec![Position, Average])?,
            ),
        };
        Ok(Certificate {
            flow,
            class: FunctionClass::convex(),
            ansatz,
            rate_tau: 0.0,
            positivity: Positivity::None,
            multipliers,
            residual_summary: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyPoint {
    pub t: f64,
    pub feasible: bool,
    pub max_block_eigenvalue: f64,
    /// `dc/dt ≤ 0` and `a_t ≥ t c_t`, for gradient-flow families.
    pub structural_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub verified: bool,
    pub points: Vec<FamilyPoint>,
    pub argmax_t: Option<f64>,
}

/// Verify a time-dependent ansatz on a grid. When `multipliers` is
/// `None` they are searched independently at each grid point.
pub fn verify_sublinear_family(
    family: &SublinearFamily,
    multipliers: Option<&BTreeMap<String, Profile>>,
    grid: &[f64],
) -> Result<FamilyReport> {
    let cert = family.certificate(multipliers.cloned().unwrap_or_default())?;
    let tol = Tolerances::default();
    let points: Vec<FamilyPoint> = grid
        .par_iter()
        .map(|&t| {
            let (feasible, worst) = if multipliers.is_some() {
                let p = check_point(&cert, t)?;
                let ok = p.max_block_eigenvalue <= tol.feasibility
                    && p.max_equality_residual <= tol.equality
                    && p.sign_violation <= tol.equality;
                (ok, p.max_block_eigenvalue)
            } else {
                let sys = certificate_system(&cert, t)?;
                let r = minimize_max_eigenvalue(&sys)?;
                (r.status == Status::Feasible, r.objective)
            };
            let structural_ok = match family {
                SublinearFamily::ConvexGradientFlow { a, c } => {
                    let cs = c.sample(t)?;
                    cs.rate <= 1e-12 && a.eval(t)? >= t * cs.value - 1e-12 * (1.0 + t * cs.value.abs())
                }
                _ => true,
            };
            Ok(FamilyPoint { t, feasible, max_block_eigenvalue: worst, structural_ok })
        })
        .collect::<Result<_>>()?;
    let argmax_t = points
        .iter()
        .max_by(|a, b| a.max_block_eigenvalue.total_cmp(&b.max_block_eigenvalue))
        .map(|p| p.t);
    let verified = points.iter().all(|p| p.feasible && p.structural_ok);
    Ok(FamilyReport { verified, points, argmax_t })
}

/// Families tested for admitting only the zero Lyapunov function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TrivialityFamily {
    /// Second-order SDE with Polyak-Ruppert averaging and `a1 = 0`.
    AcceleratedSdeAveraging { beta: Profile, step: Profile },
    ThirdOrder { alpha: Profile, beta: Profile, gamma: Profile },
    /// Convex gradient flow, which has nontrivial certificates.
    GradientFlow,
}

impl TrivialityFamily {
    pub fn accelerated_default() -> Self {
        TrivialityFamily::AcceleratedSdeAveraging { beta: Profile::reciprocal(3.0), step: Profile::constant(1.0) }
    }

    pub fn third_order_default() -> Self {
        TrivialityFamily::ThirdOrder {
            alpha: Profile::reciprocal(3.0),
            beta: Profile::product(vec![Profile::reciprocal(3.0), Profile::reciprocal(1.0)]),
            gamma: Profile::reciprocal(1.0),
        }
    }

    /// Default grid: 25 log-spaced points on `[0.1, 100]`.
    pub fn default_grid() -> Vec<f64> {
        numerics::log_grid(0.1, 100.0, 25)
    }
}

fn unknown_matrix(prefix: &str, n: usize) -> Vec<Vec<Coef>> {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let (a, b) = if i <= j { (i, j) } else { (j, i) };
                    let name = format!("{prefix}{}{}", a + 1, b + 1);
                    Coef::new(Affine::var(&name), Affine::var(&format!("{name}_dot")))
                })
                .collect()
        })
        .collect()
}

/// System at time `t` with the leading coefficient fixed to `lead`, every
/// other ansatz entry (and every derivative) free, and the normalisation
/// `lead + trace(P) = 1`.
fn normalized_family_system(family: &TrivialityFamily, t: f64, lead: f64) -> Result<LmiSystem> {
    let lead = Coef::new(Affine::constant(lead), Affine::var("lead_dot"));
    let (mut sys, diag) = match family {
        TrivialityFamily::AcceleratedSdeAveraging { beta, step } => {
            let p = unknown_matrix("p", 3);
            let sys = acc_averaged_system(eval(beta, t)?, eval(step, t)?, t, &Coef::zero(), &lead, &p, "acc_sde_trivial");
            (sys, vec!["p11", "p22", "p33"])
        }
        TrivialityFamily::ThirdOrder { alpha, beta, gamma } => {
            let p = unknown_matrix("p", 3);
            let sys = third_order_system(eval(alpha, t)?, eval(beta, t)?, eval(gamma, t)?, &lead, &p, "third_order_trivial");
            (sys, vec!["p11", "p22", "p33"])
        }
        TrivialityFamily::GradientFlow => {
            let c = Coef::new(Affine::var("c"), Affine::var("c_dot"));
            let mut sys = gf_system(0.0, &lead, &c, 0.0, "gradient_flow_trivial");
            sys.declare("c", Sign::Nonnegative);
            (sys, vec!["c"])
        }
    };
    let mut norm = lead.value.clone() - Affine::constant(1.0);
    for d in diag {
        norm.add_term(d, 1.0);
    }
    sys.push_equality("normalization", norm);
    Ok(sys)
}

fn admits_system(sys: &LmiSystem) -> Result<bool> {
    match minimize_max_eigenvalue(sys) {
        Ok(r) => Ok(r.admits_certificate()),
        Err(SolverError::IllPosed { .. }) => Ok(false),
        Err(SolverError::Unbounded { .. }) => Ok(true),
        Err(e) => Err(e.into()),
    }
}

/// Smallest leading coefficient probed by the triviality test.
pub const TRIVIALITY_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrivialityPoint {
    pub t: f64,
    /// Largest certifiable leading coefficient under
    /// `leading + trace(P) = 1`, to within `1e-6`; zero when even
    /// [`TRIVIALITY_FLOOR`] is not certifiable.
    pub max_leading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrivialityReport {
    pub trivial: bool,
    pub points: Vec<TrivialityPoint>,
}

fn max_leading_at(family: &TrivialityFamily, t: f64) -> Result<f64> {
    if !admits_system(&normalized_family_system(family, t, TRIVIALITY_FLOOR)?)? {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (TRIVIALITY_FLOOR, 1.0);
    if admits_system(&normalized_family_system(family, t, hi)?)? {
        return Ok(hi);
    }
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if admits_system(&normalized_family_system(family, t, mid)?)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// `true` when no grid point admits a Lyapunov function whose leading
/// coefficient is at least [`TRIVIALITY_FLOOR`] after normalisation.
pub fn detect_trivial_only(family: &TrivialityFamily, grid: &[f64]) -> Result<TrivialityReport> {
    let points: Vec<TrivialityPoint> = grid
        .par_iter()
        .map(|&t| Ok(TrivialityPoint { t, max_leading: max_leading_at(family, t)? }))
        .collect::<Result<_>>()?;
    let trivial = points.iter().all(|p| p.max_leading == 0.0);
    Ok(TrivialityReport { trivial, points })
}
