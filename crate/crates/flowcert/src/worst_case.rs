//! Worst-case instances recovered from primal solutions, and a
//! max-of-quadratics interpolant realising them.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lmi::{build_gf_primal_normalized, LmiError, PrimalSdp};
use crate::model::{interpolation_slack, FlowSpec, FunctionClass, InterpolationTriplet, ModelError, Smoothness};
use crate::solver::{solve_primal, SolverError};

#[derive(Debug, Error)]
pub enum WorstCaseError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lmi(#[from] LmiError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("no primal reconstruction for {0}")]
    Unsupported(String),
    #[error("primal optimum {0} is far from zero; tau is not the certified rate")]
    NotCertified(f64),
    #[error("triplets {0} and {1} are not interpolable (slack {2})")]
    NotInterpolable(usize, usize, f64),
    #[error("interpolant needs L = infinity")]
    FiniteSmoothness,
    #[error("no triplets")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, WorstCaseError>;

/// Eigenvalues at or below this are dropped from the factorisation.
pub const RANK_CUTOFF: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseData {
    pub gram: Vec<Vec<f64>>,
    /// Function values `(f(X), f*)`.
    pub values: Vec<f64>,
    pub rank: usize,
    pub primal_objective: f64,
    /// The iterate first, then the minimiser `(0, 0, 0)`.
    pub triplets: Vec<InterpolationTriplet>,
    pub interpolant_samples: Vec<(f64, f64)>,
}

/// `G = Yᵀ Y` with `Y` having one row per retained eigenvalue.
pub fn factor_gram(g: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(g.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let kept: Vec<usize> = order.into_iter().filter(|&k| eig.eigenvalues[k] > RANK_CUTOFF).collect();
    let n = g.nrows();
    DMatrix::from_fn(kept.len(), n, |r, c| eig.eigenvalues[kept[r]].sqrt() * eig.eigenvectors[(c, kept[r])])
}

/// Gauss-Newton polish of a rank-one gradient-flow solution onto the
/// active interpolation constraints `<g, x> = 1 + mu/2 |x|²` and
/// `mu/2 |x|² = 1` (with `f - f* = 1`).
fn polish_gf(x: f64, g: f64, mu: f64) -> (f64, f64) {
    let (mut x, mut g) = (x, g);
    for _ in 0..50 {
        let r = DVector::from_vec(vec![g * x - 1.0 - 0.5 * mu * x * x, 0.5 * mu * x * x - 1.0]);
        let j = DMatrix::from_row_slice(2, 2, &[g - mu * x, x, mu * x, 0.0]);
        let Ok(step) = j.svd(true, true).solve(&r, 1e-14) else { break };
        x -= step[0];
        g -= step[1];
        if step.amax() < 1e-16 * (1.0 + x.abs()) {
            break;
        }
    }
    (x, g)
}

/// Both interpolation constraints of the gradient-flow primal are tight.
fn gf_constraints_active(sdp: &PrimalSdp, g: &DMatrix<f64>, values: &[f64]) -> bool {
    sdp.constraints.iter().all(|c| c.eval(g, values).abs() < 1e-5)
}

/// Primal worst case at `tau_star` with `V(X) = 1`, factored into triplets.
pub fn extract_worst_case(flow: &FlowSpec, class: &FunctionClass, tau_star: f64) -> Result<WorstCaseData> {
    extract_worst_case_with(flow, class, tau_star, 101)
}

pub fn extract_worst_case_with(flow: &FlowSpec, class: &FunctionClass, tau_star: f64, points: usize) -> Result<WorstCaseData> {
    if !matches!(flow, FlowSpec::GradientFlow) {
        return Err(WorstCaseError::Unsupported(format!("{flow:?}")));
    }
    if class.smoothness().is_finite() {
        return Err(WorstCaseError::FiniteSmoothness);
    }
    let sdp: PrimalSdp = build_gf_primal_normalized(class, 1.0, 0.0, tau_star)?;
    let sol = solve_primal(&sdp)?;
    if sol.objective.abs() > 1e-4 * (1.0 + tau_star) {
        return Err(WorstCaseError::NotCertified(sol.objective));
    }
    let g = sol.gram_matrix();
    let y = factor_gram(&g);
    let rank = y.nrows();
    let gap = sol.values[0] - sol.values[1];
    let mut x: Vec<f64> = y.column(0).iter().copied().collect();
    let mut grad: Vec<f64> = y.column(1).iter().copied().collect();
    if rank == 1 && class.mu() > 0.0 && gf_constraints_active(&sdp, &g, &sol.values) {
        let (px, pg) = polish_gf(x[0], grad[0], class.mu());
        x = vec![px];
        grad = vec![pg];
    }
    let triplets = vec![InterpolationTriplet::new(x, grad, gap)?, InterpolationTriplet::origin(rank)];
    let interpolant_samples = build_interpolant(&triplets, class, points)?;
    Ok(WorstCaseData {
        gram: (0..g.nrows()).map(|i| g.row(i).iter().copied().collect()).collect(),
        values: sol.values,
        rank,
        primal_objective: sol.objective,
        triplets,
        interpolant_samples,
    })
}

fn check_interpolable(triplets: &[InterpolationTriplet], class: &FunctionClass) -> Result<()> {
    for (i, a) in triplets.iter().enumerate() {
        for (j, b) in triplets.iter().enumerate() {
            if i != j {
                let s = interpolation_slack(class, a, b)?;
                if s < -1e-7 {
                    return Err(WorstCaseError::NotInterpolable(i, j, s));
                }
            }
        }
    }
    Ok(())
}

/// `max_i f_i + <g_i, x - x_i> + mu/2 |x - x_i|²` and its gradient.
pub fn interpolant(triplets: &[InterpolationTriplet], mu: f64, x: &[f64]) -> (f64, Vec<f64>) {
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for t in triplets {
        let d: Vec<f64> = x.iter().zip(&t.x).map(|(a, b)| a - b).collect();
        let v = t.f + t.g.iter().zip(&d).map(|(g, e)| g * e).sum::<f64>() + 0.5 * mu * d.iter().map(|e| e * e).sum::<f64>();
        if v > best.0 {
            best = (v, t.g.iter().zip(&d).map(|(g, e)| g + mu * e).collect());
        }
    }
    best
}

/// Sample the interpolant on `points` equally spaced points of the line
/// through the origin along the farthest triplet, symmetric about zero
/// and reaching that triplet.
pub fn build_interpolant(triplets: &[InterpolationTriplet], class: &FunctionClass, points: usize) -> Result<Vec<(f64, f64)>> {
    if triplets.is_empty() {
        return Err(WorstCaseError::Empty);
    }
    if class.smoothness() != Smoothness::Infinite {
        return Err(WorstCaseError::FiniteSmoothness);
    }
    check_interpolable(triplets, class)?;
    let d = triplets[0].x.len();
    let far = triplets
        .iter()
        .max_by(|a, b| norm(&a.x).total_cmp(&norm(&b.x)))
        .expect("nonempty");
    let reach = norm(&far.x);
    let (dir, reach) = if reach > 0.0 {
        (far.x.iter().map(|v| v / reach).collect::<Vec<_>>(), reach)
    } else {
        let mut e = vec![0.0; d.max(1)];
        e[0] = 1.0;
        (e, 1.0)
    };
    let n = points.max(2);
    Ok((0..n)
        .map(|k| {
            let s = -reach + 2.0 * reach * k as f64 / (n - 1) as f64;
            let x: Vec<f64> = dir.iter().map(|u| u * s).collect();
            (s, interpolant(triplets, class.mu(), &x).0)
        })
        .collect())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Two whitespace-separated columns with header `points funcgf`.
pub fn write_samples(mut out: impl Write, samples: &[(f64, f64)]) -> std::io::Result<()> {
    writeln!(out, "points funcgf")?;
    for (x, f) in samples {
        writeln!(out, "{x:.12e} {f:.12e}")?;
    }
    Ok(())
}
