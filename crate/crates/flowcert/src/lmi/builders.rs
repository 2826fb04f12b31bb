//! One constructor per flow family.
//!
//! Gram orderings:
//! - gradient flows: `[X - x*, g]`
//! - oscillator / second-order flows: `[X - x*, X', g]`, matching the
//!   indexing of `P` over `(X - x*, X')`
//! - averaged first-order SDEs: `[X - x*, X̄ - x*, g(X), g(X̄)]`
//! - averaged second-order SDE: `[X', X - x*, X̄ - x*, g(X), g(X̄)]`
//! - third-order flow: `[X - x*, X', X'', g]`
//!
//! Multipliers of averaged systems, each attached to the inequality
//! `f_i ≥ f_j + <g_j, y_i - y_j>` written as the pair `(i, j)`:
//! `lambda1 (X, x*)`, `lambda2 (X̄, x*)`, `lambda3 (x*, X̄)`,
//! `lambda4 (x*, X)`, `lambda5 (X, X̄)`, `lambda6 (X̄, X)`.
//! Two-point systems use `lambda1 (x*, X)` and `lambda2 (X, x*)`.

use super::derive::{Coef, GramModel, Point};
use super::{Affine, Block, LmiError, LmiSystem, PrimalSdp, PrimalTerm, Sense};
use crate::model::{FunctionClass, Profile};

type Result<T> = std::result::Result<T, LmiError>;

/// Profile value and derivative as constant coefficients.
pub fn coef_at(p: &Profile, t: f64) -> Result<Coef> {
    let s = p.sample(t)?;
    Ok(Coef::fixed(s.value, s.rate))
}

fn coef_matrix(ps: &[Vec<Profile>], n: usize, t: f64) -> Result<Vec<Vec<Coef>>> {
    if ps.len() != n || ps.iter().any(|r| r.len() != n) {
        return Err(LmiError::InvalidArgument(format!("expected a {n}x{n} matrix of profiles")));
    }
    for i in 0..n {
        for j in 0..i {
            if ps[i][j] != ps[j][i] {
                return Err(LmiError::InvalidArgument("matrix of profiles is not symmetric".into()));
            }
        }
    }
    ps.iter().map(|r| r.iter().map(|p| coef_at(p, t)).collect()).collect()
}

fn nonneg_arg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(LmiError::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")))
    }
}

fn lambdas(sys: &mut LmiSystem, n: usize) -> Vec<Affine> {
    (1..=n).map(|k| sys.nonneg(&format!("lambda{k}"))).collect()
}

fn c(v: f64) -> Affine {
    Affine::constant(v)
}

fn half(a: &Affine) -> Affine {
    a.scale(0.5)
}

/// Primal data for the strongly convex gradient flow with `F = (f(X), f*)`
/// and Gram ordering `[X - x*, g]`.
pub fn build_gf_primal(class: &FunctionClass, a: f64, c: f64, tau: f64) -> Result<PrimalSdp> {
    nonneg_arg("a", a)?;
    nonneg_arg("c", c)?;
    nonneg_arg("tau", tau)?;
    let mu = class.mu();
    Ok(PrimalSdp {
        gram_dimension: 2,
        f_dimension: 2,
        objective: PrimalTerm::new(vec![vec![c * tau, -c], vec![-c, -a]], vec![a * tau, -a * tau]),
        constraints: vec![
            PrimalTerm::new(vec![vec![-mu / 2.0, 0.5], vec![0.5, 0.0]], vec![-1.0, 1.0]),
            PrimalTerm::new(vec![vec![-mu / 2.0, 0.0], vec![0.0, 0.0]], vec![1.0, -1.0]),
        ],
        normalization: None,
    })
}

/// As [`build_gf_primal`] with the constraint `V(X) = 1`.
pub fn build_gf_primal_normalized(class: &FunctionClass, a: f64, c: f64, tau: f64) -> Result<PrimalSdp> {
    let mut sdp = build_gf_primal(class, a, c, tau)?;
    sdp.normalization = Some(PrimalTerm::new(vec![vec![c, 0.0], vec![0.0, 0.0]], vec![a, -a]));
    Ok(sdp)
}

/// Gradient-flow system with coefficients that may be unknown or time dependent.
pub fn gf_system(mu: f64, a: &Coef, c: &Coef, tau: f64, name: &str) -> LmiSystem {
    let mut sys = LmiSystem::new(name);
    declare_coef_vars(&mut sys, &[a, c]);
    let l = lambdas(&mut sys, 2);
    let lsum = &l[0] + &l[1];
    let xx = &(&c.rate + &c.value.scale(tau)) - &lsum.scale(mu / 2.0);
    let xg = &(-c.value.clone()) + &half(&l[0]);
    let gg = -a.value.clone();
    sys.push_block(Block::from_rows("S", Sense::NegSemidef, vec![vec![xx, xg.clone()], vec![xg, gg]]).unwrap());
    let eq = &(&a.rate + &a.value.scale(tau)) - &(&l[0] - &l[1]);
    sys.push_equality("rate", eq);
    sys
}

/// Declares any unknowns appearing in coefficients as free variables;
/// callers tighten signs afterwards where needed.
fn declare_coef_vars(sys: &mut LmiSystem, coefs: &[&Coef]) {
    for cf in coefs {
        for name in cf.value.variables().chain(cf.rate.variables()) {
            if sys.variable(name).is_none() {
                sys.free(name);
            }
        }
    }
}

/// Strongly convex gradient flow, `S ⪯ 0` and `τ a = λ1 - λ2`.
pub fn build_gf_dual(class: &FunctionClass, a: f64, c: f64, tau: f64) -> Result<LmiSystem> {
    nonneg_arg("a", a)?;
    nonneg_arg("c", c)?;
    nonneg_arg("tau", tau)?;
    Ok(gf_system(class.mu(), &Coef::fixed(a, 0.0), &Coef::fixed(c, 0.0), tau, "gradient_flow"))
}

/// Convex gradient flow with time-varying `a_t`, `c_t`, instantiated at `t`.
pub fn build_gf_convex_dual(a_t: &Profile, c_t: &Profile, t: f64) -> Result<LmiSystem> {
    Ok(gf_system(0.0, &coef_at(a_t, t)?, &coef_at(c_t, t)?, 0.0, "gradient_flow_convex"))
}

/// `X' = -alpha_t ∇f(X)` with `V = a_t (f - f*) + c_t |X - x*|²`.
pub fn build_nonautonomous_gf_dual(
    alpha_t: &Profile,
    a_t: &Profile,
    c_t: &Profile,
    class: &FunctionClass,
    t: f64,
) -> Result<LmiSystem> {
    let alpha = alpha_t.eval(t)?;
    let (a, cc) = (coef_at(a_t, t)?, coef_at(c_t, t)?);
    let mut sys = LmiSystem::new("nonautonomous_gradient_flow");
    let mut gm = GramModel::new(2, class.mu());
    let x = gm.slot("X", vec![1.0, 0.0], vec![0.0, -alpha], 1);
    gm.state(vec![1.0, 0.0], vec![0.0, -alpha]);
    let l = lambdas(&mut sys, 2);
    let b = gm.derivative_block(
        &mut sys,
        "S",
        &[(x, a)],
        &[vec![cc]],
        0.0,
        &[(l[0].clone(), Point::Optimum, x), (l[1].clone(), x, Point::Optimum)],
    );
    sys.push_block(b);
    Ok(sys)
}

/// Second-order derivative block over `[X - x*, X', g]` for `X'' + beta X' + ∇f = 0`.
///
/// `p` holds `(p11, p12, p22)`. Rates of the coefficients enter like the
/// time derivatives of a time-dependent ansatz; `tau` adds `τ V`.
pub fn second_order_system(mu: f64, beta: f64, a: &Coef, p: [&Coef; 3], tau: f64, name: &str) -> LmiSystem {
    second_order_system_with_step(mu, beta, 1.0, a, p, tau, name)
}

/// As [`second_order_system`] for `X'' + beta X' + step ∇f(X) = 0`.
pub fn second_order_system_with_step(
    mu: f64,
    beta: f64,
    step: f64,
    a: &Coef,
    p: [&Coef; 3],
    tau: f64,
    name: &str,
) -> LmiSystem {
    let mut sys = LmiSystem::new(name);
    declare_coef_vars(&mut sys, &[a, p[0], p[1], p[2]]);
    let l = lambdas(&mut sys, 2);
    let [p11, p12, p22] = p;
    let rate = |q: &Coef| &q.rate + &q.value.scale(tau);
    let xx = &rate(p11) - &(&l[0] + &l[1]).scale(mu / 2.0);
    let xv = &(&rate(p12) + &p11.value) - &p12.value.scale(beta);
    let xg = &p12.value.scale(-step) + &half(&l[0]);
    let vv = &(&rate(p22) + &p12.value.scale(2.0)) - &p22.value.scale(2.0 * beta);
    let vg = &half(&a.value) - &p22.value.scale(step);
    let rows = vec![
        vec![xx, xv.clone(), xg.clone()],
        vec![xv, vv, vg.clone()],
        vec![xg, vg, Affine::zero()],
    ];
    sys.push_block(Block::from_rows("S", Sense::NegSemidef, rows).unwrap());
    sys.push_equality("rate", &rate(a) - &(&l[0] - &l[1]));
    sys
}

/// `V ≥ 0` through `ν1 (x*, X)` and `ν2 (X, x*)`, with `a = ν2 - ν1`.
pub fn push_oscillator_positivity(sys: &mut LmiSystem, mu: f64, a: &Affine, p: [&Affine; 3]) {
    let n1 = sys.nonneg("nu1");
    let n2 = sys.nonneg("nu2");
    let [p11, p12, p22] = p;
    let xx = p11 + &(&n1 + &n2).scale(mu / 2.0);
    let xg = n1.scale(-0.5);
    let rows = vec![
        vec![xx, p12.clone(), xg.clone()],
        vec![p12.clone(), p22.clone(), Affine::zero()],
        vec![xg, Affine::zero(), Affine::zero()],
    ];
    sys.push_block(Block::from_rows("positivity", Sense::PosSemidef, rows).unwrap());
    sys.push_equality("positivity", a - &(&n2 - &n1));
}

/// `P ⪰ 0` as its own block.
pub fn push_p_psd(sys: &mut LmiSystem, p: &[Vec<Affine>]) {
    sys.push_block(Block::from_rows("P", Sense::PosSemidef, p.to_vec()).unwrap());
}

/// Damped oscillator `X'' + beta X' + ∇f(X) = 0` at rate `tau`.
pub fn build_oscillator_dual(
    class: &FunctionClass,
    beta: f64,
    a: f64,
    p: [[f64; 2]; 2],
    tau: f64,
    enforce_p_psd: bool,
) -> Result<LmiSystem> {
    nonneg_arg("beta", beta)?;
    nonneg_arg("tau", tau)?;
    if p[0][1] != p[1][0] {
        return Err(LmiError::InvalidArgument("P must be symmetric".into()));
    }
    let coefs = [Coef::fixed(p[0][0], 0.0), Coef::fixed(p[0][1], 0.0), Coef::fixed(p[1][1], 0.0)];
    let mut sys =
        second_order_system(class.mu(), beta, &Coef::fixed(a, 0.0), [&coefs[0], &coefs[1], &coefs[2]], tau, "oscillator");
    let pv = [c(p[0][0]), c(p[0][1]), c(p[1][1])];
    if enforce_p_psd {
        push_p_psd(&mut sys, &[vec![pv[0].clone(), pv[1].clone()], vec![pv[1].clone(), pv[2].clone()]]);
    } else {
        push_oscillator_positivity(&mut sys, class.mu(), &c(a), [&pv[0], &pv[1], &pv[2]]);
    }
    Ok(sys)
}

/// `X'' + beta_t X' + ∇f(X) = 0` with a time-dependent ansatz at time `t`.
/// `p_positivity` appends `P_t ⪰ 0` as a separate block.
pub fn build_agf_dual(
    a_t: &Profile,
    p_t: &[Vec<Profile>],
    beta_t: &Profile,
    class: &FunctionClass,
    t: f64,
    p_positivity: bool,
) -> Result<LmiSystem> {
    let beta = beta_t.eval(t)?;
    let a = coef_at(a_t, t)?;
    let p = coef_matrix(p_t, 2, t)?;
    let mut sys = second_order_system(class.mu(), beta, &a, [&p[0][0], &p[0][1], &p[1][1]], 0.0, "second_order_flow");
    if p_positivity {
        let pm: Vec<Vec<Affine>> = p.iter().map(|r| r.iter().map(|q| q.value.clone()).collect()).collect();
        push_p_psd(&mut sys, &pm);
    }
    Ok(sys)
}

/// How the averaged state is driven in a first-order averaged system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragingDynamics {
    /// Step `h_t` in front of the gradient.
    pub step: f64,
    /// Relaxation speed of the average, `1/t` or `u_t / ∫u`.
    pub speed: f64,
    /// Gradient evaluated at the average rather than the iterate.
    pub gradient_on_average: bool,
}

/// Averaged first-order system over `[X, X̄, g, ḡ]` with `P` over `(X, X̄)`.
pub fn averaged_first_order_system(
    mu: f64,
    dynamics: AveragingDynamics,
    a1: &Coef,
    a2: &Coef,
    p: &[Vec<Coef>],
    name: &str,
) -> LmiSystem {
    let AveragingDynamics { step: h, speed: k, gradient_on_average } = dynamics;
    let mut sys = LmiSystem::new(name);
    let flat: Vec<&Coef> = [a1, a2].into_iter().chain(p.iter().flatten()).collect();
    declare_coef_vars(&mut sys, &flat);
    let l = lambdas(&mut sys, 6);
    let mut gm = GramModel::new(4, mu);
    let drive = if gradient_on_average { 3 } else { 2 };
    let mut xdot = vec![0.0; 4];
    xdot[drive] = -h;
    let avgdot = vec![k, -k, 0.0, 0.0];
    let x = gm.slot("X", gm.unit(0), xdot.clone(), 2);
    let xb = gm.slot("Xbar", gm.unit(1), avgdot.clone(), 3);
    gm.state(gm.unit(0), xdot);
    gm.state(gm.unit(1), avgdot);
    let o = Point::Optimum;
    let pairs = [
        (l[0].clone(), x, o),
        (l[1].clone(), xb, o),
        (l[2].clone(), o, xb),
        (l[3].clone(), o, x),
        (l[4].clone(), x, xb),
        (l[5].clone(), xb, x),
    ];
    let b = gm.derivative_block(&mut sys, "S", &[(x, a1.clone()), (xb, a2.clone())], p, 0.0, &pairs);
    sys.push_block(b);
    sys
}

/// Polyak-Ruppert averaging, `dX̄ = (X - X̄)/t dt`, convex case.
pub fn build_pr_averaging_dual(
    a1_t: &Profile,
    a2_t: &Profile,
    p_t: &[Vec<Profile>],
    h_t: &Profile,
    t: f64,
) -> Result<LmiSystem> {
    if t <= 0.0 {
        return Err(LmiError::InvalidArgument(format!("averaging needs t > 0, got {t}")));
    }
    let dynamics = AveragingDynamics { step: h_t.eval(t)?, speed: 1.0 / t, gradient_on_average: false };
    let p = coef_matrix(p_t, 2, t)?;
    Ok(averaged_first_order_system(0.0, dynamics, &coef_at(a1_t, t)?, &coef_at(a2_t, t)?, &p, "pr_averaging"))
}

/// Weighted averaging with speed `C_t = u_t / ∫_0^t u`, general ansatz.
#[allow(clippy::too_many_arguments)]
pub fn build_weighted_avg_dual_with(
    a1_t: &Profile,
    a2_t: &Profile,
    p_t: &[Vec<Profile>],
    u_t: &Profile,
    h_t: &Profile,
    class: &FunctionClass,
    t: f64,
) -> Result<LmiSystem> {
    let speed = weighted_speed(u_t, t)?;
    let dynamics = AveragingDynamics { step: h_t.eval(t)?, speed, gradient_on_average: false };
    let p = coef_matrix(p_t, 2, t)?;
    Ok(averaged_first_order_system(
        class.mu(),
        dynamics,
        &coef_at(a1_t, t)?,
        &coef_at(a2_t, t)?,
        &p,
        "weighted_averaging",
    ))
}

/// `u_t / ∫_0^t u_s ds`.
pub fn weighted_speed(u_t: &Profile, t: f64) -> Result<f64> {
    let mass = u_t.integral(0.0, t)?;
    if !(mass > 0.0) {
        return Err(LmiError::InvalidArgument(format!("averaging weight has no mass on [0, {t}]")));
    }
    Ok(u_t.eval(t)? / mass)
}

/// Weighted averaging with the canonical ansatz `a2 = ∫u`, `p11 = u/(2h)`.
pub fn build_weighted_avg_dual(u_t: &Profile, h_t: &Profile, class: &FunctionClass, t: f64) -> Result<LmiSystem> {
    let u = u_t.sample(t)?;
    let h = h_t.sample(t)?;
    let mass = u_t.integral(0.0, t)?;
    let p11 = Coef::fixed(u.value / (2.0 * h.value), u.rate / (2.0 * h.value) - u.value * h.rate / (2.0 * h.value * h.value));
    let p = vec![vec![p11, Coef::zero()], vec![Coef::zero(), Coef::zero()]];
    let dynamics = AveragingDynamics { step: h.value, speed: weighted_speed(u_t, t)?, gradient_on_average: false };
    Ok(averaged_first_order_system(
        class.mu(),
        dynamics,
        &Coef::zero(),
        &Coef::fixed(mass, u.value),
        &p,
        "weighted_averaging",
    ))
}

/// Primal averaging: the gradient is taken at `X̄` and drives `X`.
pub fn build_primal_avg_dual(a2_t: &Profile, p_t: &[Vec<Profile>], h_t: &Profile, t: f64) -> Result<LmiSystem> {
    if t <= 0.0 {
        return Err(LmiError::InvalidArgument(format!("averaging needs t > 0, got {t}")));
    }
    let dynamics = AveragingDynamics { step: h_t.eval(t)?, speed: 1.0 / t, gradient_on_average: true };
    let p = coef_matrix(p_t, 2, t)?;
    Ok(averaged_first_order_system(0.0, dynamics, &Coef::zero(), &coef_at(a2_t, t)?, &p, "primal_averaging"))
}

/// Second-order SDE with averaging over `[X', X, X̄, g, ḡ]`; `P` is over
/// `(X', X - x*, X̄ - x*)` and is required to be PSD.
pub fn acc_averaged_system(beta: f64, step: f64, t: f64, a1: &Coef, a2: &Coef, p: &[Vec<Coef>], name: &str) -> LmiSystem {
    let mut sys = LmiSystem::new(name);
    let flat: Vec<&Coef> = [a1, a2].into_iter().chain(p.iter().flatten()).collect();
    declare_coef_vars(&mut sys, &flat);
    let l = lambdas(&mut sys, 6);
    let mut gm = GramModel::new(5, 0.0);
    let vdot = vec![-beta, 0.0, 0.0, -step, 0.0];
    let avgdot = vec![0.0, 1.0 / t, -1.0 / t, 0.0, 0.0];
    let x = gm.slot("X", gm.unit(1), gm.unit(0), 3);
    let xb = gm.slot("Xbar", gm.unit(2), avgdot.clone(), 4);
    gm.state(gm.unit(0), vdot);
    gm.state(gm.unit(1), gm.unit(0));
    gm.state(gm.unit(2), avgdot);
    let o = Point::Optimum;
    let pairs = [
        (l[0].clone(), x, o),
        (l[1].clone(), xb, o),
        (l[2].clone(), o, xb),
        (l[3].clone(), o, x),
        (l[4].clone(), x, xb),
        (l[5].clone(), xb, x),
    ];
    let b = gm.derivative_block(&mut sys, "S", &[(x, a1.clone()), (xb, a2.clone())], p, 0.0, &pairs);
    sys.push_block(b);
    let pm: Vec<Vec<Affine>> = p.iter().map(|r| r.iter().map(|q| q.value.clone()).collect()).collect();
    push_p_psd(&mut sys, &pm);
    sys
}

/// Accelerated SDE `X'' + beta_t X' + ∇f(X) = noise` with Polyak-Ruppert averaging.
pub fn build_acc_sde_avg_dual(
    a1_t: &Profile,
    a2_t: &Profile,
    p_t: &[Vec<Profile>],
    beta_t: &Profile,
    t: f64,
) -> Result<LmiSystem> {
    build_acc_sde_avg_dual_with_step(a1_t, a2_t, p_t, beta_t, &Profile::constant(1.0), t)
}

/// As [`build_acc_sde_avg_dual`] with a step `h_t` in front of the gradient.
pub fn build_acc_sde_avg_dual_with_step(
    a1_t: &Profile,
    a2_t: &Profile,
    p_t: &[Vec<Profile>],
    beta_t: &Profile,
    h_t: &Profile,
    t: f64,
) -> Result<LmiSystem> {
    if t <= 0.0 {
        return Err(LmiError::InvalidArgument(format!("averaging needs t > 0, got {t}")));
    }
    let p = coef_matrix(p_t, 3, t)?;
    Ok(acc_averaged_system(
        beta_t.eval(t)?,
        h_t.eval(t)?,
        t,
        &coef_at(a1_t, t)?,
        &coef_at(a2_t, t)?,
        &p,
        "accelerated_sde_averaging",
    ))
}

/// Third-order flow `X''' + alpha X'' + beta X' + gamma ∇f(X) = 0` over
/// `[X - x*, X', X'', g]`, with `P ⪰ 0`.
pub fn third_order_system(alpha: f64, beta: f64, gamma: f64, a: &Coef, p: &[Vec<Coef>], name: &str) -> LmiSystem {
    let mut sys = LmiSystem::new(name);
    let flat: Vec<&Coef> = std::iter::once(a).chain(p.iter().flatten()).collect();
    declare_coef_vars(&mut sys, &flat);
    let l = lambdas(&mut sys, 2);
    let mut gm = GramModel::new(4, 0.0);
    let wdot = vec![0.0, -beta, -alpha, -gamma];
    let x = gm.slot("X", gm.unit(0), gm.unit(1), 3);
    gm.state(gm.unit(0), gm.unit(1));
    gm.state(gm.unit(1), gm.unit(2));
    gm.state(gm.unit(2), wdot);
    let pairs = [(l[0].clone(), Point::Optimum, x), (l[1].clone(), x, Point::Optimum)];
    let b = gm.derivative_block(&mut sys, "S", &[(x, a.clone())], p, 0.0, &pairs);
    sys.push_block(b);
    let pm: Vec<Vec<Affine>> = p.iter().map(|r| r.iter().map(|q| q.value.clone()).collect()).collect();
    push_p_psd(&mut sys, &pm);
    sys
}

pub fn build_third_order_dual(
    a_t: &Profile,
    p_t: &[Vec<Profile>],
    alpha_t: &Profile,
    beta_t: &Profile,
    gamma_t: &Profile,
    t: f64,
) -> Result<LmiSystem> {
    let p = coef_matrix(p_t, 3, t)?;
    Ok(third_order_system(
        alpha_t.eval(t)?,
        beta_t.eval(t)?,
        gamma_t.eval(t)?,
        &coef_at(a_t, t)?,
        &p,
        "third_order",
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Smoothness;
    use std::collections::BTreeMap;

    fn asg(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn gf_primal_matches_printed_data() {
        let class = FunctionClass::strongly_convex(0.1).unwrap();
        let sdp = build_gf_primal(&class, 1.0, 0.0, 0.2).unwrap();
        assert_eq!(sdp.objective.a, vec![vec![0.0, 0.0], vec![0.0, -1.0]]);
        assert_eq!(sdp.objective.b, vec![0.2, -0.2]);
        assert_eq!(sdp.constraints[0].a, vec![vec![-0.05, 0.5], vec![0.5, 0.0]]);
        let class = FunctionClass::new(1.0, Smoothness::Infinite).unwrap();
        let sdp = build_gf_primal(&class, 2.0, 3.0, 1.0).unwrap();
        assert_eq!(sdp.objective.a, vec![vec![3.0, -3.0], vec![-3.0, -2.0]]);
        assert!(build_gf_primal(&class, -1.0, 0.0, 0.0).is_err());
        let zero = build_gf_primal(&FunctionClass::convex(), 0.0, 0.0, 0.0).unwrap();
        assert!(zero.is_trivial());
    }

    #[test]
    fn gf_dual_block_at_the_certificate() {
        let class = FunctionClass::strongly_convex(0.1).unwrap();
        let sys = build_gf_dual(&class, 1.0, 0.0, 0.2).unwrap();
        sys.validate().unwrap();
        let a = asg(&[("lambda1", 0.2), ("lambda2", 0.0)]);
        let m = sys.blocks[0].eval(&a);
        assert!((m[(0, 0)] + 0.01).abs() < 1e-15);
        assert!((m[(0, 1)] - 0.1).abs() < 1e-15);
        assert_eq!(m[(1, 1)], -1.0);
        assert_eq!(sys.equality_residuals(&a), vec![0.0]);
    }

    #[test]
    fn gf_convex_retrieves_textbook_lyapunov() {
        let sys = build_gf_convex_dual(&Profile::monomial(1.0, 1.0), &Profile::constant(0.5), 5.0).unwrap();
        let a = asg(&[("lambda1", 1.0), ("lambda2", 0.0)]);
        let m = sys.blocks[0].eval(&a);
        assert_eq!(m[(0, 0)], 0.0);
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(m[(1, 1)], -5.0);
        assert_eq!(sys.equality_residuals(&a), vec![0.0]);
    }

    #[test]
    fn hand_written_second_order_block_agrees_with_derivation() {
        let (mu, beta, tau) = (0.3, 0.7, 0.2);
        let p = [Coef::fixed(1.1, 0.4), Coef::fixed(0.2, -0.3), Coef::fixed(0.5, 0.1)];
        let a = Coef::fixed(1.3, 0.6);
        let sys = second_order_system(mu, beta, &a, [&p[0], &p[1], &p[2]], tau, "h");
        let mut other = LmiSystem::new("d");
        let l = lambdas(&mut other, 2);
        let mut gm = GramModel::new(3, mu);
        let vdot = vec![0.0, -beta, -1.0];
        let x = gm.slot("X", gm.unit(0), gm.unit(1), 2);
        gm.state(gm.unit(0), gm.unit(1));
        gm.state(gm.unit(1), vdot);
        let quad = vec![vec![p[0].clone(), p[1].clone()], vec![p[1].clone(), p[2].clone()]];
        let b = gm.derivative_block(
            &mut other,
            "S",
            &[(x, a)],
            &quad,
            tau,
            &[(l[0].clone(), Point::Optimum, x), (l[1].clone(), x, Point::Optimum)],
        );
        for (u, v) in sys.blocks[0].lower.iter().zip(&b.lower) {
            let d = u - v;
            assert!(d.constant.abs() < 1e-14 && d.terms.values().all(|c| c.abs() < 1e-14), "{u} vs {v}");
        }
        let d = &sys.equalities[0].expr - &other.equalities[0].expr;
        assert!(d.constant.abs() < 1e-14 && d.terms.values().all(|c| c.abs() < 1e-14));
    }
}
