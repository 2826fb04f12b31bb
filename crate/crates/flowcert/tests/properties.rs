//! Property tests for the invariants of the certification engine, the
//! worst-case reconstruction, the integrators and the closed-form bounds.

use flowcert::analysis::{bisect_rate, check_certificate, default_tau_hi, Certificate, ReferenceCertificate};
use flowcert::bounds::{evaluate, step_only_bound, BoundConstants, BoundFamily, SdeBoundSpec};
use flowcert::model::{Averaging, FlowSpec, FunctionClass, Profile, Smoothness};
use flowcert::simulate::{integrate_ode, simulate_sde, Ensemble, Interpolated, NoiseModel, Objective, Quadratic, SimOptions};
use flowcert::worst_case::{extract_worst_case, factor_gram, interpolant};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn scaled(p: &Profile, s: f64) -> Profile {
    Profile::product(vec![Profile::constant(s), p.clone()])
}

fn scale_certificate(cert: &Certificate, s: f64) -> Certificate {
    let mut out = cert.clone();
    out.ansatz.a_terms = cert.ansatz.a_terms.iter().map(|p| scaled(p, s)).collect();
    out.ansatz.quad = cert.ansatz.quad.iter().map(|r| r.iter().map(|p| scaled(p, s)).collect()).collect();
    out.multipliers = cert.multipliers.iter().map(|(k, p)| (k.clone(), scaled(p, s))).collect();
    out.residual_summary = None;
    out
}

fn assert_downward_closed(trace: &[(f64, bool)]) {
    let max_ok = trace.iter().filter(|(_, ok)| *ok).map(|(t, _)| *t).fold(f64::NEG_INFINITY, f64::max);
    let min_bad = trace.iter().filter(|(_, ok)| !*ok).map(|(t, _)| *t).fold(f64::INFINITY, f64::min);
    assert!(max_ok < min_bad, "feasible rate {max_ok} above an infeasible one {min_bad}");
}

fn sde(step: f64, gamma: f64, trace_sigma: f64, averaging: Averaging) -> FlowSpec {
    FlowSpec::FirstOrderSde {
        step: Profile::constant(step),
        gamma,
        trace_sigma,
        smoothness: Smoothness::Infinite,
        averaging,
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn gradient_flow_bisection_trace_is_downward_closed(mu in 0.01f64..1.0) {
        let class = FunctionClass::strongly_convex(mu).unwrap();
        let b = bisect_rate(&FlowSpec::GradientFlow, &class, false, default_tau_hi(mu)).unwrap();
        assert_downward_closed(&b.trace);
        prop_assert!((b.tau_star - 2.0 * mu).abs() < 1e-5 * (1.0 + mu));
    }

    #[test]
    fn reference_certificates_survive_positive_scaling(mu in 0.01f64..0.5, s in 0.1f64..10.0) {
        for kind in ReferenceCertificate::ALL {
            let cert = kind.build(mu).unwrap();
            let grid = kind.grid();
            let base = check_certificate(&cert, grid.as_ref()).unwrap();
            let scaled = check_certificate(&scale_certificate(&cert, s), grid.as_ref()).unwrap();
            prop_assert!(base.certified, "{kind:?} at mu = {mu}");
            prop_assert!(scaled.certified, "{kind:?} scaled by {s}");
            let b = base.summary.max_block_eigenvalue;
            let r = scaled.summary.max_block_eigenvalue;
            prop_assert!((r - s * b).abs() <= 1e-9 * (1.0 + s), "{kind:?}: {r} vs {s} * {b}");
        }
    }

    #[test]
    fn factor_gram_round_trips(n in 1usize..6, k in 1usize..6, seed in any::<u64>()) {
        let mut state = seed | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let b = DMatrix::from_fn(n, k, |_, _| next());
        let g = &b * b.transpose();
        let y = factor_gram(&g);
        let err = (y.transpose() * &y - &g).amax();
        prop_assert!(err <= 1e-8 * (1.0 + g.amax()), "round-trip error {err}");
    }

    #[test]
    fn worst_case_decays_at_the_certified_rate(mu in 0.02f64..1.0) {
        let class = FunctionClass::strongly_convex(mu).unwrap();
        let tau = 2.0 * mu;
        let data = extract_worst_case(&FlowSpec::GradientFlow, &class, tau).unwrap();
        let iterate = &data.triplets[0];
        let (value, grad) = interpolant(&data.triplets, mu, &iterate.x);
        let gap = value - data.triplets[1].f;
        let dv_dt = -grad.iter().map(|g| g * g).sum::<f64>();
        prop_assert!((gap - 1.0).abs() < 1e-6, "V = {gap}");
        prop_assert!((dv_dt + tau * gap).abs() < 1e-6, "dV/dt = {dv_dt}, tau V = {}", tau * gap);
    }

    #[test]
    fn rk4_error_shrinks_at_fourth_order(c in 0.5f64..3.0, x0 in 0.5f64..2.0) {
        let f = Quadratic::new(vec![c]).unwrap();
        let err = |dt: f64| {
            let opts = SimOptions { t0: 0.0, t1: 2.0, dt, record_every: 1 };
            let rec = integrate_ode(&FlowSpec::GradientFlow, &f, &[x0], &opts).unwrap();
            let exact = 0.5 * c * x0 * x0 * (-2.0 * c * 2.0).exp();
            (rec.f_values.last().unwrap() - exact).abs()
        };
        let (coarse, fine) = (err(0.2), err(0.1));
        prop_assert!(coarse >= 12.0 * fine, "coarse {coarse:e}, fine {fine:e}");
    }

    #[test]
    fn noiseless_averaging_integrates_the_trajectory(c in 0.2f64..2.0, x0 in -2.0f64..2.0) {
        let f = Quadratic::new(vec![c]).unwrap();
        let dt = 0.01;
        let opts = SimOptions { t0: dt, t1: 5.0, dt, record_every: 1 };
        let rec = integrate_ode(&sde(1.0, 1.0, 0.0, Averaging::PolyakRuppert), &f, &[x0], &opts).unwrap();
        let avg = rec.averages.as_ref().unwrap();
        let mut integral = 0.0;
        for k in 1..rec.times.len() {
            integral += 0.5 * (rec.times[k] - rec.times[k - 1]) * (rec.positions[k][0] + rec.positions[k - 1][0]);
            let lhs = rec.times[k] * avg[k][0];
            let rhs = rec.times[0] * rec.positions[0][0] + integral;
            prop_assert!((lhs - rhs).abs() < 1e-4, "t = {}: {lhs} vs {rhs}", rec.times[k]);
        }
    }

    #[test]
    fn bounds_grow_with_noise(
        t in 2.0f64..100.0,
        gamma in 0.01f64..2.0,
        trace in 0.0f64..4.0,
        bump in 1.0f64..3.0,
        alpha in 0.0f64..0.5,
    ) {
        let families = [
            BoundFamily::StepOnly { alpha },
            BoundFamily::StepOnly { alpha: 1.0 },
            BoundFamily::PrAveraged { alpha, beta: 0.5 },
            BoundFamily::WeightedAveraged { alpha, beta: 0.5 },
            BoundFamily::AccDiminishing { alpha: 1.5, b: 3.0, beta: 0.5 },
            BoundFamily::AccCanonical,
        ];
        for family in families {
            let at = |g: f64, tr: f64| {
                let constants = BoundConstants { gamma: g, trace_sigma: tr, ..BoundConstants::default() };
                evaluate(&SdeBoundSpec::new(family, constants).unwrap(), t).unwrap().total()
            };
            let base = at(gamma, trace);
            prop_assert!(at(gamma * bump, trace) >= base - 1e-12 * base.abs(), "{family:?} in gamma");
            prop_assert!(at(gamma, trace * bump + 0.1) >= base - 1e-12 * base.abs(), "{family:?} in trace");
        }
    }

    #[test]
    fn step_only_bound_is_continuous_in_alpha_below_one(alpha in 0.0f64..0.99, t in 0.5f64..200.0) {
        let at = |a: f64| {
            let spec = SdeBoundSpec::new(BoundFamily::StepOnly { alpha: a }, BoundConstants::default()).unwrap();
            step_only_bound(&spec, t).unwrap().total()
        };
        let (lo, hi) = (at(alpha), at(alpha + 1e-7));
        prop_assert!((lo - hi).abs() <= 1e-4 * lo.abs().max(1e-12), "{lo} vs {hi}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 3, ..ProptestConfig::default() })]

    #[test]
    fn relaxed_positivity_never_lowers_the_rate(mu in 0.01f64..0.2) {
        let class = FunctionClass::strongly_convex(mu).unwrap();
        let flow = FlowSpec::damped_oscillator(2.0 * mu.sqrt()).unwrap();
        let psd = bisect_rate(&flow, &class, true, default_tau_hi(mu)).unwrap();
        let relaxed = bisect_rate(&flow, &class, false, default_tau_hi(mu)).unwrap();
        assert_downward_closed(&psd.trace);
        assert_downward_closed(&relaxed.trace);
        prop_assert!(relaxed.tau_star >= psd.tau_star - 1e-6, "{} < {}", relaxed.tau_star, psd.tau_star);
    }
}

#[test]
fn ou_moments_match_the_euler_maruyama_recursion() {
    let (c, x0, gamma, sigma2, dt) = (1.5, 1.0, 0.5, 0.8, 0.01);
    let f = Quadratic::new(vec![c]).unwrap();
    let noise = NoiseModel::isotropic(1, sigma2);
    let opts = SimOptions { t0: 0.0, t1: 2.0, dt, record_every: 50 };
    for seed in [1u64, 7, 2024] {
        let rec = simulate_sde(&sde(1.0, gamma, sigma2, Averaging::None), &f, &noise, &[x0], &opts, &Ensemble { n_paths: 4000, seed })
            .unwrap();
        let stderr = rec.f_stderr.as_ref().unwrap();
        let (mut m, mut v) = (x0, 0.0);
        let mut step = 0;
        for (k, &t) in rec.times.iter().enumerate() {
            while (step as f64) * dt < t - 0.5 * dt {
                m *= 1.0 - c * dt;
                v = (1.0 - c * dt).powi(2) * v + gamma * sigma2 * dt;
                step += 1;
            }
            let expected = 0.5 * c * (m * m + v);
            let got = rec.f_values[k];
            assert!((got - expected).abs() <= 3.0 * stderr[k] + 1e-12, "seed {seed}, t = {t}: {got} vs {expected} ± {}", stderr[k]);
        }
    }
}

#[test]
fn interpolated_objective_matches_the_interpolant() {
    let class = FunctionClass::strongly_convex(0.1).unwrap();
    let data = extract_worst_case(&FlowSpec::GradientFlow, &class, 0.2).unwrap();
    let f = Interpolated { triplets: data.triplets.clone(), mu: 0.1 };
    let x = data.triplets[0].x.clone();
    let mut g = vec![0.0; x.len()];
    f.gradient(&x, &mut g);
    let (value, grad) = interpolant(&data.triplets, 0.1, &x);
    assert!((f.value(&x) - value).abs() < 1e-12);
    assert!(g.iter().zip(&grad).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn step_only_bound_jumps_at_alpha_one() {
    let t = 50.0;
    let at = |a: f64| {
        let spec = SdeBoundSpec::new(BoundFamily::StepOnly { alpha: a }, BoundConstants::default()).unwrap();
        step_only_bound(&spec, t).unwrap().total()
    };
    let below = at(1.0 - 1e-9);
    let at_one = at(1.0);
    assert!(below.is_finite() && at_one.is_finite());
    assert!((below - at_one).abs() > 1e-3 * below, "{below} vs {at_one}");
}

#[test]
fn hypotheses_are_rejected_just_past_their_boundary() {
    let ok = |family| SdeBoundSpec::new(family, BoundConstants::default()).is_ok();
    let eps = 1e-9;

    assert!(ok(BoundFamily::StepOnly { alpha: 1.0 - eps }));
    assert!(ok(BoundFamily::StepOnly { alpha: 1.0 }));
    assert!(!ok(BoundFamily::StepOnly { alpha: 1.0 + eps }));

    assert!(ok(BoundFamily::PrAveraged { alpha: 0.5 - eps, beta: 0.5 }));
    assert!(!ok(BoundFamily::PrAveraged { alpha: 0.5 + eps, beta: 0.5 }));
    assert!(ok(BoundFamily::PrAveraged { alpha: 0.0, beta: 1.0 }));
    assert!(!ok(BoundFamily::PrAveraged { alpha: 0.0, beta: 1.0 + eps }));
    assert!(ok(BoundFamily::PrAveraged { alpha: 0.0, beta: eps }));
    assert!(!ok(BoundFamily::PrAveraged { alpha: 0.0, beta: 0.0 }));

    assert!(ok(BoundFamily::WeightedAveraged { alpha: 0.4 - eps, beta: 0.4 }));
    assert!(ok(BoundFamily::WeightedAveraged { alpha: 0.4, beta: 0.4 }));
    assert!(!ok(BoundFamily::WeightedAveraged { alpha: 0.4 + eps, beta: 0.4 }));

    // cap = min((2b - alpha)/3, 2 - alpha): the first term binds for b = 1, the second for b = 3.
    for (alpha, b) in [(1.0, 1.0), (1.5, 3.0)] {
        let cap = ((2.0 * b - alpha) / 3.0f64).min(2.0 - alpha);
        assert!(ok(BoundFamily::AccDiminishing { alpha, b, beta: cap - eps }));
        assert!(!ok(BoundFamily::AccDiminishing { alpha, b, beta: cap + eps }));
    }
}

#[test]
fn noiseless_sde_tracks_the_ode_at_first_order() {
    let f = Quadratic::new(vec![0.5, 2.0]).unwrap();
    let x0 = [1.0, -1.0];
    let flow = sde(1.0, 1.0, 0.0, Averaging::None);
    let gap = |dt: f64| {
        let opts = SimOptions { t0: 0.0, t1: 2.0, dt, record_every: 1 };
        let ode = integrate_ode(&flow, &f, &x0, &opts).unwrap();
        let em = simulate_sde(&flow, &f, &NoiseModel::zero(2), &x0, &opts, &Ensemble { n_paths: 3, seed: 5 }).unwrap();
        ode.f_values.iter().zip(&em.f_values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let (coarse, fine) = (gap(0.01), gap(0.005));
    assert!(coarse < 0.02, "{coarse}");
    let ratio = coarse / fine;
    assert!((1.7..2.3).contains(&ratio), "error ratio {ratio}");
}
