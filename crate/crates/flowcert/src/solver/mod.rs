//! Small dense semidefinite programs.
//!
//! Equalities are eliminated by parameterising their solution set. Rows
//! of a block whose diagonal entry vanishes identically on that set are
//! removed after forcing the rest of the row to zero, and sign variables
//! that cannot be strictly positive are pinned to zero. The remaining
//! problem has a strict interior whenever it is strictly feasible, and
//! is solved by a log-det barrier method.

mod conic;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lmi::{Affine, Block, LmiError, LmiSystem, PrimalSdp, Sense, Sign};
use crate::numerics::max_eigenvalue;
use conic::{Conic, Lmi};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Lmi(#[from] LmiError),
    #[error("equality constraints are inconsistent (residual {residual:.3e})")]
    IllPosed { residual: f64 },
    #[error("objective is unbounded below (reached {objective:.3e} at the trust radius)")]
    Unbounded { objective: f64 },
    #[error("constraints have no strictly feasible point")]
    NoInterior,
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub feasibility: f64,
    pub equality: f64,
    pub marginal: f64,
    /// Target duality-gap bound of the barrier method.
    pub gap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { feasibility: 1e-7, equality: 1e-9, marginal: 1e-6, gap: 1e-13 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Feasible,
    Marginal,
    Infeasible,
}

impl Status {
    pub fn classify(objective: f64, max_equality: f64, tol: &Tolerances) -> Status {
        if max_equality > tol.equality || !objective.is_finite() {
            return Status::Infeasible;
        }
        if objective <= tol.feasibility {
            Status::Feasible
        } else if objective <= tol.marginal {
            Status::Marginal
        } else {
            Status::Infeasible
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: Status,
    pub assignment: BTreeMap<String, f64>,
    /// Largest sense-normalised block eigenvalue (or sign violation) at the assignment.
    pub objective: f64,
    /// Optimal value once rows forced to vanish are removed; its sign
    /// separates strictly feasible from infeasible systems. `None` when
    /// the forced equalities are inconsistent, so no assignment makes
    /// every block semidefinite.
    pub reduced_objective: Option<f64>,
    pub block_residuals: Vec<f64>,
    pub equality_residuals: Vec<f64>,
    pub iterations: usize,
}

impl SolveReport {
    pub fn is_feasible(&self) -> bool {
        self.status == Status::Feasible
    }

    /// Sign test used by rate bisection.
    pub fn admits_certificate(&self) -> bool {
        matches!(self.reduced_objective, Some(v) if v <= 0.0)
    }

    pub fn value(&self, name: &str) -> f64 {
        self.assignment.get(name).copied().unwrap_or(0.0)
    }
}

/// Affine matrix `c + Σ z_i m_i` in the original variables.
#[derive(Debug, Clone)]
struct AffMat {
    c: DMatrix<f64>,
    m: Vec<DMatrix<f64>>,
}

impl AffMat {
    fn from_block(b: &Block, index: &BTreeMap<&str, usize>, n: usize) -> Self {
        let sign = if b.sense == Sense::NegSemidef { 1.0 } else { -1.0 };
        let d = b.dim;
        let mut c = DMatrix::zeros(d, d);
        let mut m = vec![DMatrix::zeros(d, d); n];
        for i in 0..d {
            for j in 0..=i {
                let e = b.get(i, j);
                c[(i, j)] = sign * e.constant;
                c[(j, i)] = sign * e.constant;
                for (name, coef) in &e.terms {
                    let k = index[name.as_str()];
                    m[k][(i, j)] = sign * coef;
                    m[k][(j, i)] = sign * coef;
                }
            }
        }
        Self { c, m }
    }

    fn eval(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let mut f = self.c.clone();
        for (i, mi) in self.m.iter().enumerate() {
            if z[i] != 0.0 {
                f.zip_apply(mi, |a, b| *a += z[i] * b);
            }
        }
        f
    }

    /// Entry `(i, j)` as `(constant, coefficient row)`.
    fn entry(&self, i: usize, j: usize) -> (f64, DVector<f64>) {
        (self.c[(i, j)], DVector::from_iterator(self.m.len(), self.m.iter().map(|mk| mk[(i, j)])))
    }

    fn restrict(&self, rows: &[usize]) -> AffMat {
        let pick = |x: &DMatrix<f64>| DMatrix::from_fn(rows.len(), rows.len(), |a, b| x[(rows[a], rows[b])]);
        AffMat { c: pick(&self.c), m: self.m.iter().map(pick).collect() }
    }

    /// Re-express over `z = zp + N y`.
    fn reparam(&self, p: &AffineSet) -> AffMat {
        let c = self.eval(&p.zp);
        let r = p.basis.ncols();
        let d = self.c.nrows();
        let mut m = vec![DMatrix::zeros(d, d); r];
        for (k, mk) in self.m.iter().enumerate() {
            for (j, mj) in m.iter_mut().enumerate() {
                let w = p.basis[(k, j)];
                if w != 0.0 {
                    mj.zip_apply(mk, |a, b| *a += w * b);
                }
            }
        }
        AffMat { c, m }
    }

    fn scale(&self) -> f64 {
        self.m.iter().chain(std::iter::once(&self.c)).flat_map(|x| x.iter()).fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// `{ zp + N y }`.
#[derive(Debug, Clone)]
struct AffineSet {
    zp: DVector<f64>,
    basis: DMatrix<f64>,
}

fn eliminate(a: &DMatrix<f64>, b: &DVector<f64>, start: &DVector<f64>) -> Result<AffineSet, f64> {
    let n = start.len();
    if a.nrows() == 0 {
        return Ok(AffineSet { zp: start.clone(), basis: DMatrix::identity(n, n) });
    }
    let rows = a.nrows().max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.rows_mut(0, a.nrows()).copy_from(a);
    let svd = padded.clone().svd(true, true);
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let smax = svd.singular_values.iter().fold(0.0f64, |x, &y| x.max(y));
    let cut = 1e-11 * smax.max(1e-300);
    let mut bp = DVector::zeros(rows);
    bp.rows_mut(0, b.len()).copy_from(b);
    let resid = &bp - &padded * start;
    let mut zp = start.clone();
    let mut min_norm = DVector::zeros(n);
    let mut null_cols = Vec::new();
    for k in 0..n {
        let s = svd.singular_values[k];
        let v = vt.row(k).transpose();
        if s > cut {
            zp += &v * (u.column(k).dot(&resid) / s);
            min_norm += &v * (u.column(k).dot(&bp) / s);
        } else {
            null_cols.push(v);
        }
    }
    // Row-wise relative residual, so well-scaled rows are not masked by large ones.
    let zn = min_norm.amax();
    let r_start = a * &zp - b;
    let r_min = a * &min_norm - b;
    let mut check = 0.0f64;
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        let r = r_start[i].abs().max(r_min[i].abs());
        let scale = 1.0 + b[i].abs() + a.row(i).amax() * zn;
        if r / scale > worst {
            worst = r / scale;
            check = r;
        }
    }
    if worst > 1e-9 {
        return Err(check);
    }
    let basis = if null_cols.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(&null_cols) };
    Ok(AffineSet { zp, basis })
}

/// System in matrix form over the declared variables.
#[derive(Debug, Clone)]
struct Prepared {
    names: Vec<String>,
    signs: Vec<usize>,
    blocks: Vec<AffMat>,
    eq_a: DMatrix<f64>,
    eq_b: DVector<f64>,
    start: DVector<f64>,
}

impl Prepared {
    fn new(sys: &LmiSystem) -> Result<Self, SolverError> {
        sys.validate()?;
        let names: Vec<String> = sys.variables.iter().map(|v| v.name.clone()).collect();
        let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let n = names.len();
        let signs: Vec<usize> =
            sys.variables.iter().enumerate().filter(|(_, v)| v.sign == Sign::Nonnegative).map(|(i, _)| i).collect();
        let blocks = sys.blocks.iter().map(|b| AffMat::from_block(b, &index, n)).collect();
        let m = sys.equalities.len();
        let mut eq_a = DMatrix::zeros(m, n);
        let mut eq_b = DVector::zeros(m);
        for (r, e) in sys.equalities.iter().enumerate() {
            eq_b[r] = -e.expr.constant;
            for (name, c) in &e.expr.terms {
                eq_a[(r, index[name.as_str()])] = *c;
            }
        }
        let mut start = DVector::zeros(n);
        for &s in &signs {
            start[s] = 1.0;
        }
        Ok(Self { names, signs, blocks, eq_a, eq_b, start })
    }

    fn push_equality(&mut self, row: &DVector<f64>, rhs: f64) {
        let m = self.eq_a.nrows();
        let n = self.eq_a.ncols();
        let mut a = DMatrix::zeros(m + 1, n);
        a.rows_mut(0, m).copy_from(&self.eq_a);
        a.row_mut(m).copy_from(&row.transpose());
        self.eq_a = a;
        self.eq_b = self.eq_b.clone().insert_row(m, rhs);
    }

    fn assignment(&self, z: &DVector<f64>) -> BTreeMap<String, f64> {
        self.names.iter().cloned().zip(z.iter().copied()).collect()
    }
}

/// Outcome of structural reduction.
struct Reduced {
    set: AffineSet,
    /// Rows kept per block.
    rows: Vec<Vec<usize>>,
    /// Sign variables still needing a barrier.
    signs: Vec<usize>,
    interior: DVector<f64>,
    removed_any: bool,
}

const ZERO_TOL: f64 = 1e-11;

fn is_zero_row(c: f64, row: &DVector<f64>, scale: f64) -> bool {
    c.abs() <= ZERO_TOL * scale && row.amax() <= ZERO_TOL * scale
}

/// Facial reduction of zero diagonals and forced-zero signs. `Err(())`
/// means the implied equalities are inconsistent.
fn reduce(base: &Prepared, tol: &Tolerances, steps: &mut usize) -> Result<Option<Reduced>, SolverError> {
    let mut prep = base.clone();
    let mut rows: Vec<Vec<usize>> = prep.blocks.iter().map(|b| (0..b.c.nrows()).collect()).collect();
    let mut pinned: Vec<usize> = Vec::new();
    let mut removed_any = false;
    let base_ok = eliminate(&base.eq_a, &base.eq_b, &base.start);
    if let Err(residual) = base_ok {
        return Err(SolverError::IllPosed { residual });
    }
    loop {
        let set = match eliminate(&prep.eq_a, &prep.eq_b, &prep.start) {
            Ok(s) => s,
            Err(_) => return Ok(None),
        };
        // zero diagonals
        let mut changed = false;
        for (k, blk) in prep.blocks.clone().iter().enumerate() {
            let scale = blk.scale().max(1.0);
            let red = blk.reparam(&set);
            let mut keep = rows[k].clone();
            for &a in &rows[k] {
                if !keep.contains(&a) {
                    continue;
                }
                let (c, row) = red.entry(a, a);
                if !is_zero_row(c, &row, scale) {
                    continue;
                }
                for &b in &keep {
                    if b == a {
                        continue;
                    }
                    let (c, row) = red.entry(a, b);
                    if !is_zero_row(c, &row, scale) {
                        let (c0, r0) = blk.entry(a, b);
                        prep.push_equality(&r0, -c0);
                    }
                }
                keep.retain(|&x| x != a);
                changed = true;
                removed_any = true;
            }
            rows[k] = keep;
            if changed {
                break;
            }
        }
        if changed {
            continue;
        }
        // sign variables
        let mut active = Vec::new();
        for &j in &prep.signs {
            if pinned.contains(&j) {
                continue;
            }
            let row = set.basis.row(j);
            if row.amax() <= ZERO_TOL * (1.0 + set.zp.amax()) {
                if set.zp[j] < -tol.equality {
                    return Ok(None);
                }
                continue;
            }
            active.push(j);
        }
        if active.is_empty() {
            let interior = DVector::zeros(set.basis.ncols());
            return Ok(Some(Reduced { set, rows, signs: active, interior, removed_any }));
        }
        let (y, margin, forced) = sign_interior(&set, &active, steps);
        if margin > 0.0 {
            return Ok(Some(Reduced { set, rows, signs: active, interior: y, removed_any }));
        }
        if forced.is_empty() {
            return Ok(None);
        }
        for j in forced {
            let mut row = DVector::zeros(prep.names.len());
            row[j] = 1.0;
            prep.push_equality(&row, 0.0);
            pinned.push(j);
            removed_any = true;
        }
    }
}

/// Maximise the smallest sign variable over the affine set. Returns the
/// point, the attained margin and, if no strict interior exists, the
/// variables that vanish on the optimal face.
fn sign_interior(set: &AffineSet, signs: &[usize], steps: &mut usize) -> (DVector<f64>, f64, Vec<usize>) {
    let r = set.basis.ncols();
    let n = r + 1;
    let mut lmis = Vec::new();
    for &j in signs {
        let mut m = Vec::with_capacity(n);
        for k in 0..r {
            m.push(DMatrix::from_element(1, 1, set.basis[(j, k)]));
        }
        m.push(DMatrix::from_element(1, 1, 1.0));
        lmis.push(Lmi { c0: DMatrix::from_element(1, 1, set.zp[j]), m });
    }
    // s >= -1
    let mut m = vec![DMatrix::zeros(1, 1); n];
    m[r] = DMatrix::from_element(1, 1, 1.0);
    lmis.push(Lmi { c0: DMatrix::from_element(1, 1, 1.0), m });
    let mut cost = DVector::zeros(n);
    cost[r] = 1.0;
    let mut w0 = DVector::zeros(n);
    w0[r] = signs.iter().map(|&j| -set.zp[j]).fold(0.0, f64::max) + 1.0;
    let mut conic = Conic { cost, lmis, center: DVector::zeros(n), ball_dims: r, radius: 0.0 };
    let (res, _) = conic.follow_expanding(1.0 + set.zp.amax(), &w0, 1e-13, |_| false, |w| w[r] < 0.0);
    *steps += res.steps;
    let y = res.w.rows(0, r).into_owned();
    let z = &set.zp + &set.basis * &y;
    let margin = signs.iter().map(|&j| z[j]).fold(f64::INFINITY, f64::min);
    let scale = signs.iter().map(|&j| z[j].abs()).fold(1e-300, f64::max);
    let forced = if margin > 1e-9 * scale.max(1.0) {
        Vec::new()
    } else {
        signs.iter().copied().filter(|&j| z[j] < 1e-6 * scale.max(1.0)).collect()
    };
    let margin = if forced.is_empty() { margin.max(1e-300) } else { 0.0 };
    (y, margin, forced)
}

struct EpigraphSolution {
    z: DVector<f64>,
    t: f64,
    steps: usize,
    at_radius: bool,
}

/// `min t` over `B_k(z) ⪯ t I` with barrier-protected signs.
fn solve_epigraph(blocks: &[AffMat], set: &AffineSet, signs: &[usize], start: &DVector<f64>, fold_signs: bool, tol: &Tolerances) -> EpigraphSolution {
    let r = set.basis.ncols();
    let n = r + 1;
    let mut lmis = Vec::new();
    let mut t0 = f64::NEG_INFINITY;
    let z0 = &set.zp + &set.basis * start;
    for b in blocks {
        if b.c.nrows() == 0 {
            continue;
        }
        let red = b.reparam(set);
        let d = red.c.nrows();
        let mut m: Vec<DMatrix<f64>> = red.m.iter().map(|x| -x).collect();
        m.push(DMatrix::identity(d, d));
        t0 = t0.max(max_eigenvalue(&red.eval(start)));
        lmis.push(Lmi { c0: -red.c, m });
    }
    for &j in signs {
        let mut m: Vec<DMatrix<f64>> = (0..r).map(|k| DMatrix::from_element(1, 1, set.basis[(j, k)])).collect();
        if fold_signs {
            t0 = t0.max(-z0[j]);
            m.push(DMatrix::from_element(1, 1, 1.0));
        } else {
            m.push(DMatrix::zeros(1, 1));
        }
        lmis.push(Lmi { c0: DMatrix::from_element(1, 1, set.zp[j]), m });
    }
    if !t0.is_finite() {
        t0 = 0.0;
    }
    let mut cost = DVector::zeros(n);
    cost[r] = 1.0;
    let mut conic = Conic { cost, lmis, center: start.clone(), ball_dims: r, radius: 0.0 };
    let mut w0 = start.clone().insert_row(r, 0.0);
    w0[r] = t0 + 1.0;
    let (res, at_radius) = conic.follow_expanding(1.0 + set.zp.amax() + start.amax(), &w0, tol.gap, |_| false, |_| false);
    let (w, steps) = (res.w, res.steps);
    let y = w.rows(0, r).into_owned();
    EpigraphSolution { z: &set.zp + &set.basis * &y, t: w[r], steps, at_radius }
}

fn reduced_max(blocks: &[AffMat], rows: &[Vec<usize>], z: &DVector<f64>) -> f64 {
    blocks
        .iter()
        .zip(rows)
        .filter(|(_, r)| !r.is_empty())
        .map(|(b, r)| max_eigenvalue(&b.restrict(r).eval(z)))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn finish(
    sys: &LmiSystem,
    prep: &Prepared,
    z: &DVector<f64>,
    reduced: Option<f64>,
    steps: usize,
    tol: &Tolerances,
) -> SolveReport {
    let assignment = prep.assignment(z);
    let block_residuals = sys.block_residuals(&assignment);
    let equality_residuals = sys.equality_residuals(&assignment);
    let mut objective = block_residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let violation = sys.sign_violation(&assignment);
    if violation > 0.0 {
        objective = objective.max(violation);
    }
    if !objective.is_finite() {
        objective = 0.0;
    }
    let max_eq = equality_residuals.iter().copied().fold(0.0, f64::max);
    SolveReport {
        status: Status::classify(objective, max_eq, tol),
        assignment,
        objective,
        reduced_objective: reduced,
        block_residuals,
        equality_residuals,
        iterations: steps,
    }
}

/// Minimise the largest sense-normalised eigenvalue over all blocks.
pub fn minimize_max_eigenvalue(sys: &LmiSystem) -> Result<SolveReport, SolverError> {
    minimize_max_eigenvalue_with(sys, &Tolerances::default())
}

pub fn minimize_max_eigenvalue_with(sys: &LmiSystem, tol: &Tolerances) -> Result<SolveReport, SolverError> {
    let prep = Prepared::new(sys)?;
    let mut steps = 0;
    let mut fallback_reduced = None;
    if let Some(red) = reduce(&prep, tol, &mut steps)? {
        let blocks: Vec<AffMat> = prep.blocks.iter().zip(&red.rows).map(|(b, r)| b.restrict(r)).collect();
        let sol = solve_epigraph(&blocks, &red.set, &red.signs, &red.interior, false, tol);
        steps += sol.steps;
        if sol.at_radius {
            return Err(SolverError::Unbounded { objective: sol.t });
        }
        let reduced = reduced_max(&prep.blocks, &red.rows, &sol.z);
        let reduced = if blocks.iter().all(|b| b.c.nrows() == 0) { 0.0 } else { reduced };
        if reduced <= 0.0 || !red.removed_any {
            return Ok(finish(sys, &prep, &sol.z, Some(reduced), steps, tol));
        }
        fallback_reduced = Some(reduced);
    }
    // No point with all blocks ⪯ 0: measure the violation on the unreduced system.
    let set = eliminate(&prep.eq_a, &prep.eq_b, &prep.start).map_err(|residual| SolverError::IllPosed { residual })?;
    let active: Vec<usize> =
        prep.signs.iter().copied().filter(|&j| set.basis.row(j).amax() > ZERO_TOL * (1.0 + set.zp.amax())).collect();
    let (y, margin, _) = if active.is_empty() {
        (DVector::zeros(set.basis.ncols()), 1.0, Vec::new())
    } else {
        sign_interior(&set, &active, &mut steps)
    };
    let fold = margin <= 0.0;
    let start = if fold { DVector::zeros(set.basis.ncols()) } else { y };
    let sol = solve_epigraph(&prep.blocks, &set, &active, &start, fold, tol);
    steps += sol.steps;
    let mut report = finish(sys, &prep, &sol.z, fallback_reduced, steps, tol);
    report.objective = report.objective.max(sol.t.max(f64::MIN_POSITIVE));
    let max_eq = report.equality_residuals.iter().copied().fold(0.0, f64::max);
    report.status = Status::classify(report.objective, max_eq, tol);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalSolution {
    pub gram: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl PrimalSolution {
    pub fn gram_matrix(&self) -> DMatrix<f64> {
        let n = self.gram.len();
        DMatrix::from_fn(n, n, |i, j| self.gram[i][j])
    }
}

fn gram_var(i: usize, j: usize) -> String {
    let (a, b) = if i >= j { (i, j) } else { (j, i) };
    format!("G{a}_{b}")
}

/// The primal problem as an LMI system over `G` entries and `F`.
pub fn primal_as_system(sdp: &PrimalSdp) -> Result<(LmiSystem, Affine), SolverError> {
    sdp.validate()?;
    let n = sdp.gram_dimension;
    let mut sys = LmiSystem::new("primal");
    for i in 0..n {
        for j in 0..=i {
            sys.free(&gram_var(i, j));
        }
    }
    for k in 0..sdp.f_dimension {
        sys.free(&format!("F{k}"));
    }
    let expr = |t: &crate::lmi::PrimalTerm| {
        let mut e = Affine::zero();
        for (k, b) in t.b.iter().enumerate() {
            e.add_term(&format!("F{k}"), *b);
        }
        for i in 0..n {
            for j in 0..n {
                e.add_term(&gram_var(i, j), t.a[i][j]);
            }
        }
        e
    };
    let g: Vec<Vec<Affine>> = (0..n).map(|i| (0..n).map(|j| Affine::var(&gram_var(i, j))).collect()).collect();
    sys.push_block(Block::from_rows("G", Sense::PosSemidef, g)?);
    for (k, c) in sdp.constraints.iter().enumerate() {
        sys.push_block(Block::from_rows(&format!("c{k}"), Sense::PosSemidef, vec![vec![expr(c)]])?);
    }
    if let Some(nz) = &sdp.normalization {
        sys.push_equality("normalization", expr(nz) - Affine::constant(1.0));
    }
    Ok((sys, expr(&sdp.objective)))
}

/// Maximise the primal objective; the returned `G` is PSD.
pub fn solve_primal(sdp: &PrimalSdp) -> Result<PrimalSolution, SolverError> {
    solve_primal_with(sdp, &Tolerances::default())
}

pub fn solve_primal_with(sdp: &PrimalSdp, tol: &Tolerances) -> Result<PrimalSolution, SolverError> {
    let (sys, objective) = primal_as_system(sdp)?;
    let n = sdp.gram_dimension;
    if sdp.is_trivial() && sdp.normalization.is_none() {
        return Ok(PrimalSolution {
            gram: vec![vec![0.0; n]; n],
            values: vec![0.0; sdp.f_dimension],
            objective: 0.0,
            iterations: 0,
        });
    }
    let prep = Prepared::new(&sys)?;
    let mut steps = 0;
    let red = reduce(&prep, tol, &mut steps)?.ok_or(SolverError::NoInterior)?;
    let blocks: Vec<AffMat> = prep.blocks.iter().zip(&red.rows).map(|(b, r)| b.restrict(r)).collect();
    let set = &red.set;
    let r = set.basis.ncols();
    let index: BTreeMap<&str, usize> = prep.names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut c_full = DVector::zeros(prep.names.len());
    for (name, v) in &objective.terms {
        c_full[index[name.as_str()]] = -v;
    }
    let cost = set.basis.transpose() * &c_full;
    let reduced: Vec<AffMat> = blocks.iter().filter(|b| b.c.nrows() > 0).map(|b| b.reparam(set)).collect();

    // phase one: strict interior of B_k(y) ⪯ 0
    let mut lmis = Vec::new();
    let mut s0 = 0.0f64;
    for b in &reduced {
        let d = b.c.nrows();
        let mut m: Vec<DMatrix<f64>> = b.m.iter().map(|x| -x).collect();
        m.push(DMatrix::identity(d, d));
        s0 = s0.max(max_eigenvalue(&b.c));
        lmis.push(Lmi { c0: -b.c.clone(), m });
    }
    let mut m = vec![DMatrix::zeros(1, 1); r + 1];
    m[r] = DMatrix::from_element(1, 1, 1.0);
    lmis.push(Lmi { c0: DMatrix::from_element(1, 1, 1.0), m });
    let mut pc = DVector::zeros(r + 1);
    pc[r] = 1.0;
    let scale = 1.0 + set.zp.amax();
    let mut phase1 = Conic { cost: pc, lmis, center: DVector::zeros(r + 1), ball_dims: r, radius: 0.0 };
    let mut w0 = DVector::zeros(r + 1);
    w0[r] = s0 + 1.0;
    let (p1, _) = phase1.follow_expanding(scale, &w0, 1e-12, |w| w[w.len() - 1] < -1e-3, |w| w[w.len() - 1] < 0.0);
    steps += p1.steps;
    if !(p1.w[r] < 0.0) {
        return Err(SolverError::NoInterior);
    }
    let y0 = p1.w.rows(0, r).into_owned();

    let lmis: Vec<Lmi> = reduced.iter().map(|b| Lmi { c0: -b.c.clone(), m: b.m.iter().map(|x| -x).collect() }).collect();
    let mut conic = Conic { cost, lmis, center: y0.clone(), ball_dims: r, radius: 0.0 };
    let (res, at_radius) = conic.follow_expanding(scale + y0.amax(), &y0, tol.gap, |_| false, |_| false);
    steps += res.steps;
    if at_radius {
        let z = &set.zp + &set.basis * &res.w;
        return Err(SolverError::Unbounded { objective: -objective.eval(&prep.assignment(&z)) });
    }
    let z = &set.zp + &set.basis * &res.w;
    let asg = prep.assignment(&z);
    let gram: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| asg[&gram_var(i, j)]).collect()).collect();
    let values = (0..sdp.f_dimension).map(|k| asg[&format!("F{k}")]).collect();
    Ok(PrimalSolution { gram, values, objective: objective.eval(&asg), iterations: steps })
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::{build_gf_dual, build_gf_primal_normalized};
    use crate::model::FunctionClass;

    #[test]
    fn constant_block_reports_its_eigenvalue() {
        let mut sys = LmiSystem::new("c");
        let rows = vec![vec![Affine::constant(-1.0), Affine::zero()], vec![Affine::zero(), Affine::constant(-1.0)]];
        sys.push_block(Block::from_rows("b", Sense::NegSemidef, rows).unwrap());
        let r = minimize_max_eigenvalue(&sys).unwrap();
        assert!((r.objective + 1.0).abs() < 1e-12);
        assert_eq!(r.status, Status::Feasible);
    }

    #[test]
    fn gradient_flow_feasible_at_two_mu() {
        let class = FunctionClass::strongly_convex(0.1).unwrap();
        let r = minimize_max_eigenvalue(&build_gf_dual(&class, 1.0, 0.0, 0.2).unwrap()).unwrap();
        assert!(r.objective <= 1e-7, "{r:?}");
        assert!((r.value("lambda1") - 0.2).abs() < 1e-3, "{r:?}");
        let r = minimize_max_eigenvalue(&build_gf_dual(&class, 1.0, 0.0, 0.19).unwrap()).unwrap();
        assert!(r.admits_certificate());
        assert!(r.reduced_objective.unwrap() < 0.0);
        let r = minimize_max_eigenvalue(&build_gf_dual(&class, 1.0, 0.0, 0.3).unwrap()).unwrap();
        assert_eq!(r.status, Status::Infeasible);
        assert!(r.objective > 0.0);
    }

    #[test]
    fn inconsistent_equalities_are_reported() {
        let mut sys = LmiSystem::new("bad");
        let x = sys.free("x");
        sys.push_equality("a", x.clone() - Affine::constant(1.0));
        sys.push_equality("b", x - Affine::constant(2.0));
        assert!(matches!(minimize_max_eigenvalue(&sys), Err(SolverError::IllPosed { .. })));
    }

    #[test]
    fn unbounded_objective_is_detected() {
        let mut sys = LmiSystem::new("u");
        let x = sys.free("x");
        sys.push_block(Block::from_rows("b", Sense::NegSemidef, vec![vec![x]]).unwrap());
        assert!(matches!(minimize_max_eigenvalue(&sys), Err(SolverError::Unbounded { .. })));
    }

    #[test]
    fn primal_gradient_flow_reaches_zero_at_two_mu() {
        let class = FunctionClass::strongly_convex(0.1).unwrap();
        let sol = solve_primal(&build_gf_primal_normalized(&class, 1.0, 0.0, 0.2).unwrap()).unwrap();
        assert!(sol.objective.abs() < 1e-6, "{sol:?}");
        let sol = solve_primal(&build_gf_primal_normalized(&class, 1.0, 0.0, 0.15).unwrap()).unwrap();
        assert!((sol.objective + 0.05).abs() < 1e-6, "{sol:?}");
    }
}
