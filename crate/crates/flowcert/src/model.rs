//! Shared vocabulary: function classes, time profiles, flow descriptions,
//! Lyapunov ansätze and the interpolation inequality for `F_{mu,L}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("profile {profile} is not defined at t = {t}")]
    Domain { profile: String, t: f64 },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Smoothness modulus; `Infinite` selects the non-smooth inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothness {
    Finite(f64),
    Infinite,
}

impl Smoothness {
    pub fn is_finite(&self) -> bool {
        matches!(self, Smoothness::Finite(_))
    }
}

/// The class `F_{mu,L}` of mu-strongly convex, L-smooth functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionClass {
    mu: f64,
    smoothness: Smoothness,
}

impl FunctionClass {
    pub fn new(mu: f64, smoothness: Smoothness) -> Result<Self, ModelError> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(ModelError::InvalidParameter(format!("mu must be finite and >= 0, got {mu}")));
        }
        if let Smoothness::Finite(l) = smoothness {
            if !(l.is_finite() && l > 0.0 && mu <= l) {
                return Err(ModelError::InvalidParameter(format!(
                    "need 0 <= mu <= L with L > 0, got mu = {mu}, L = {l}"
                )));
            }
        }
        Ok(Self { mu, smoothness })
    }

    /// Strongly convex (or convex when `mu = 0`) and non-smooth.
    pub fn strongly_convex(mu: f64) -> Result<Self, ModelError> {
        Self::new(mu, Smoothness::Infinite)
    }

    pub fn convex() -> Self {
        Self { mu: 0.0, smoothness: Smoothness::Infinite }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }
}

/// A scalar function of time with a closed-form derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Profile {
    /// `c`
    Constant { c: f64 },
    /// `c (t + s)^p`
    PowerShift { c: f64, p: f64, s: f64 },
    /// `r / t`
    Reciprocal { r: f64 },
    /// `c exp(rho t)`
    Exponential { c: f64, rho: f64 },
    /// Pointwise product of the factors.
    Product { factors: Vec<Profile> },
    /// Pointwise sum of the terms.
    Sum { terms: Vec<Profile> },
}

impl Profile {
    pub fn constant(c: f64) -> Self {
        Profile::Constant { c }
    }

    pub fn power_shift(c: f64, p: f64, s: f64) -> Result<Self, ModelError> {
        if p < 0.0 && s <= 0.0 {
            return Err(ModelError::InvalidParameter(format!(
                "negative power {p} needs a positive shift, got {s}"
            )));
        }
        Ok(Profile::PowerShift { c, p, s })
    }

    /// `c t^p` for `p >= 0`, a power shift with zero shift.
    pub fn monomial(c: f64, p: f64) -> Self {
        Profile::PowerShift { c, p, s: 0.0 }
    }

    pub fn reciprocal(r: f64) -> Self {
        Profile::Reciprocal { r }
    }

    pub fn exponential(c: f64, rho: f64) -> Self {
        Profile::Exponential { c, rho }
    }

    pub fn product(factors: Vec<Profile>) -> Self {
        Profile::Product { factors }
    }

    pub fn sum(terms: Vec<Profile>) -> Self {
        Profile::Sum { terms }
    }

    pub fn zero() -> Self {
        Profile::Constant { c: 0.0 }
    }

    /// True when the profile does not depend on time.
    pub fn is_static(&self) -> bool {
        match self {
            Profile::Constant { .. } => true,
            Profile::PowerShift { c, p, .. } => *c == 0.0 || *p == 0.0,
            Profile::Reciprocal { r } => *r == 0.0,
            Profile::Exponential { c, rho } => *c == 0.0 || *rho == 0.0,
            Profile::Product { factors } => factors.iter().all(Profile::is_static),
            Profile::Sum { terms } => terms.iter().all(Profile::is_static),
        }
    }

    fn domain_error(&self, t: f64) -> ModelError {
        ModelError::Domain { profile: format!("{self:?}"), t }
    }

    pub fn eval(&self, t: f64) -> Result<f64, ModelError> {
        let v = match self {
            Profile::Constant { c } => *c,
            Profile::PowerShift { c, p, s } => {
                let base = t + s;
                if base > 0.0 {
                    c * base.powf(*p)
                } else if base == 0.0 && *p > 0.0 {
                    0.0
                } else if base == 0.0 && *p == 0.0 {
                    *c
                } else {
                    return Err(self.domain_error(t));
                }
            }
            Profile::Reciprocal { r } => {
                if t <= 0.0 {
                    return Err(self.domain_error(t));
                }
                r / t
            }
            Profile::Exponential { c, rho } => c * (rho * t).exp(),
            Profile::Product { factors } => {
                let mut acc = 1.0;
                for f in factors {
                    acc *= f.eval(t)?;
                }
                acc
            }
            Profile::Sum { terms } => {
                let mut acc = 0.0;
                for f in terms {
                    acc += f.eval(t)?;
                }
                acc
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.domain_error(t))
        }
    }

    pub fn derivative(&self, t: f64) -> Result<f64, ModelError> {
        let v = match self {
            Profile::Constant { .. } => 0.0,
            Profile::PowerShift { c, p, s } => {
                let base = t + s;
                if *p == 0.0 {
                    0.0
                } else if base > 0.0 {
                    c * p * base.powf(p - 1.0)
                } else if base == 0.0 && *p == 1.0 {
                    *c
                } else if base == 0.0 && *p > 1.0 {
                    0.0
                } else {
                    return Err(self.domain_error(t));
                }
            }
            Profile::Reciprocal { r } => {
                if t <= 0.0 {
                    return Err(self.domain_error(t));
                }
                -r / (t * t)
            }
            Profile::Exponential { c, rho } => c * rho * (rho * t).exp(),
            Profile::Product { factors } => {
                let values: Vec<f64> = factors.iter().map(|f| f.eval(t)).collect::<Result<_, _>>()?;
                let mut acc = 0.0;
                for (k, f) in factors.iter().enumerate() {
                    let mut term = f.derivative(t)?;
                    for (j, v) in values.iter().enumerate() {
                        if j != k {
                            term *= v;
                        }
                    }
                    acc += term;
                }
                acc
            }
            Profile::Sum { terms } => {
                let mut acc = 0.0;
                for f in terms {
                    acc += f.derivative(t)?;
                }
                acc
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.domain_error(t))
        }
    }

    /// `∫_{t0}^{t1}` of the profile; closed form where one exists,
    /// adaptive quadrature for composite profiles.
    pub fn integral(&self, t0: f64, t1: f64) -> Result<f64, ModelError> {
        match self {
            Profile::Constant { c } => Ok(c * (t1 - t0)),
            Profile::PowerShift { c, p, s } => {
                let (b0, b1) = (t0 + s, t1 + s);
                if b0 < 0.0 || (b0 == 0.0 && *p <= -1.0) {
                    return Err(self.domain_error(t0));
                }
                if *p == -1.0 {
                    Ok(c * (b1 / b0).ln())
                } else {
                    Ok(c * (b1.powf(p + 1.0) - b0.powf(p + 1.0)) / (p + 1.0))
                }
            }
            Profile::Reciprocal { r } => {
                if t0 <= 0.0 {
                    return Err(self.domain_error(t0));
                }
                Ok(r * (t1 / t0).ln())
            }
            Profile::Exponential { c, rho } => {
                if *rho == 0.0 {
                    Ok(c * (t1 - t0))
                } else {
                    Ok(c * ((rho * t1).exp() - (rho * t0).exp()) / rho)
                }
            }
            Profile::Sum { terms } => terms.iter().map(|f| f.integral(t0, t1)).sum(),
            Profile::Product { .. } => {
                self.eval(t0)?;
                self.eval(t1)?;
                Ok(numerics::integrate(|s| self.eval(s).unwrap_or(f64::NAN), t0, t1, 1e-11))
            }
        }
    }
}

/// Value of the ansatz parameter and its time derivative at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub rate: f64,
}

impl Profile {
    pub fn sample(&self, t: f64) -> Result<Sample, ModelError> {
        Ok(Sample { value: self.eval(t)?, rate: self.derivative(t)? })
    }
}

/// Averaging companion attached to a first-order SDE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Averaging {
    None,
    PolyakRuppert,
    Weighted { weight: Profile },
    Primal,
}

/// Averaging companion attached to a second-order SDE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondOrderAveraging {
    None,
    PolyakRuppert,
    Primal,
}

/// The continuous-time dynamics under study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "flow", rename_all = "snake_case")]
pub enum FlowSpec {
    /// `X' = -∇f(X)`
    GradientFlow,
    /// `X' = -alpha_t ∇f(X)`
    NonAutonomousGradientFlow { alpha: Profile },
    /// `X'' + beta X' + ∇f(X) = 0`
    DampedOscillator { beta: f64 },
    /// `X'' + beta_t X' + ∇f(X) = 0`
    SecondOrderFlow { beta: Profile },
    /// `dX = -h_t ∇f(X) dt + h_t (gamma Sigma)^{1/2} dB` with an averaging companion.
    FirstOrderSde {
        step: Profile,
        gamma: f64,
        trace_sigma: f64,
        smoothness: Smoothness,
        averaging: Averaging,
    },
    /// `d²X + beta_t dX + h_t ∇f(X) dt + h_t (gamma Sigma)^{1/2} dB = 0`.
    SecondOrderSde {
        beta: Profile,
        step: Profile,
        gamma: f64,
        trace_sigma: f64,
        averaging: SecondOrderAveraging,
    },
}

impl FlowSpec {
    pub fn damped_oscillator(beta: f64) -> Result<Self, ModelError> {
        let f = FlowSpec::DampedOscillator { beta };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            FlowSpec::DampedOscillator { beta } if !(*beta >= 0.0 && beta.is_finite()) => {
                Err(ModelError::InvalidParameter(format!("damping must be >= 0, got {beta}")))
            }
            FlowSpec::FirstOrderSde { gamma, trace_sigma, .. }
            | FlowSpec::SecondOrderSde { gamma, trace_sigma, .. } => {
                if !(*gamma > 0.0) {
                    return Err(ModelError::InvalidParameter(format!("gamma must be > 0, got {gamma}")));
                }
                if !(*trace_sigma >= 0.0) {
                    return Err(ModelError::InvalidParameter(format!(
                        "trace bound must be >= 0, got {trace_sigma}"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Number of position-like vectors carried by the state (1 or 2).
    pub fn order(&self) -> usize {
        match self {
            FlowSpec::GradientFlow
            | FlowSpec::NonAutonomousGradientFlow { .. }
            | FlowSpec::FirstOrderSde { .. } => 1,
            _ => 2,
        }
    }
}

/// Labels for the vectors a quadratic Lyapunov form acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateLabel {
    /// `X - x*`
    Position,
    /// `X'`
    Velocity,
    /// `X''`
    Acceleration,
    /// `X̄ - x*`
    Average,
}

/// `sum_k a_k (f(.) - f*) + z^T Q z` over the labelled state vector `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovAnsatz {
    pub a_terms: Vec<Profile>,
    pub quad: Vec<Vec<Profile>>,
    pub state_basis: Vec<StateLabel>,
}

impl LyapunovAnsatz {
    pub fn new(
        a_terms: Vec<Profile>,
        quad: Vec<Vec<Profile>>,
        state_basis: Vec<StateLabel>,
    ) -> Result<Self, ModelError> {
        let n = state_basis.len();
        if quad.len() != n {
            return Err(ModelError::DimensionMismatch(quad.len(), n));
        }
        for (i, row) in quad.iter().enumerate() {
            if row.len() != n {
                return Err(ModelError::DimensionMismatch(row.len(), n));
            }
            for j in 0..i {
                if quad[i][j] != quad[j][i] {
                    return Err(ModelError::InvalidParameter(format!(
                        "quadratic part is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { a_terms, quad, state_basis })
    }

    /// Static ansatz from numbers.
    pub fn constant(a_terms: &[f64], quad: &[Vec<f64>], state_basis: Vec<StateLabel>) -> Result<Self, ModelError> {
        Self::new(
            a_terms.iter().map(|&a| Profile::constant(a)).collect(),
            quad.iter().map(|r| r.iter().map(|&v| Profile::constant(v)).collect()).collect(),
            state_basis,
        )
    }

    pub fn is_static(&self) -> bool {
        self.a_terms.iter().all(Profile::is_static) && self.quad.iter().flatten().all(Profile::is_static)
    }

    pub fn dim(&self) -> usize {
        self.state_basis.len()
    }

    /// Quadratic-part entries and their derivatives at `t`.
    pub fn quad_at(&self, t: f64) -> Result<Vec<Vec<Sample>>, ModelError> {
        self.quad.iter().map(|r| r.iter().map(|p| p.sample(t)).collect()).collect()
    }

    pub fn a_at(&self, t: f64) -> Result<Vec<Sample>, ModelError> {
        self.a_terms.iter().map(|p| p.sample(t)).collect()
    }
}

/// A (point, gradient, value) sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationTriplet {
    pub x: Vec<f64>,
    pub g: Vec<f64>,
    pub f: f64,
}

impl InterpolationTriplet {
    pub fn new(x: Vec<f64>, g: Vec<f64>, f: f64) -> Result<Self, ModelError> {
        if x.len() != g.len() {
            return Err(ModelError::DimensionMismatch(x.len(), g.len()));
        }
        Ok(Self { x, g, f })
    }

    /// The minimizer triplet `(0, 0, 0)` in dimension `d`.
    pub fn origin(d: usize) -> Self {
        Self { x: vec![0.0; d], g: vec![0.0; d], f: 0.0 }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Slack of the interpolation inequality for the ordered pair `(i, j)`.
///
/// Nonnegative on every ordered pair exactly when the samples can be
/// interpolated by a function of the class.
pub fn interpolation_slack(
    class: &FunctionClass,
    i: &InterpolationTriplet,
    j: &InterpolationTriplet,
) -> Result<f64, ModelError> {
    let d = i.x.len();
    for v in [&i.g, &j.x, &j.g] {
        if v.len() != d {
            return Err(ModelError::DimensionMismatch(v.len(), d));
        }
    }
    let dx: Vec<f64> = i.x.iter().zip(&j.x).map(|(a, b)| a - b).collect();
    let dg: Vec<f64> = i.g.iter().zip(&j.g).map(|(a, b)| a - b).collect();
    let linear = i.f - j.f - dot(&j.g, &dx);
    let mu = class.mu();
    match class.smoothness() {
        Smoothness::Infinite => Ok(linear - 0.5 * mu * dot(&dx, &dx)),
        Smoothness::Finite(l) => {
            if mu >= l {
                return Err(ModelError::InvalidParameter(
                    "interpolation inequality degenerates when mu = L".into(),
                ));
            }
            let quad = dot(&dg, &dg) / l + mu * dot(&dx, &dx) - 2.0 * mu / l * dot(&dg, &dx);
            Ok(linear - quad / (2.0 * (1.0 - mu / l)))
        }
    }
}
