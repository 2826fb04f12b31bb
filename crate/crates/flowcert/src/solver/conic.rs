//! Log-det barrier path following for `min c^T w` over `F_k(w) ⪰ 0`
//! intersected with a Euclidean ball.

use nalgebra::{Cholesky, DMatrix, DVector};

/// `c0 + Σ w_i m_i ⪰ 0`; `m` has one entry per coordinate of `w`.
#[derive(Debug, Clone)]
pub struct Lmi {
    pub c0: DMatrix<f64>,
    pub m: Vec<DMatrix<f64>>,
}

impl Lmi {
    pub fn eval(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let mut f = self.c0.clone();
        for (i, mi) in self.m.iter().enumerate() {
            if w[i] != 0.0 {
                f.zip_apply(mi, |a, b| *a += w[i] * b);
            }
        }
        f
    }

    pub fn dim(&self) -> usize {
        self.c0.nrows()
    }
}

/// Trust radii tried in turn, relative to the problem scale. A small ball
/// keeps flat directions of the optimal face from drifting to huge values.
pub const RADIUS_FACTORS: [f64; 3] = [1e3, 1e6, 1e9];

#[derive(Debug, Clone)]
pub struct Conic {
    pub cost: DVector<f64>,
    pub lmis: Vec<Lmi>,
    pub center: DVector<f64>,
    /// Ball acts on the leading `ball_dims` coordinates.
    pub ball_dims: usize,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct PathResult {
    pub w: DVector<f64>,
    pub steps: usize,
}

impl Conic {
    fn n(&self) -> usize {
        self.cost.len()
    }

    fn ball_slack(&self, w: &DVector<f64>) -> f64 {
        let d = w.rows(0, self.ball_dims) - self.center.rows(0, self.ball_dims);
        self.radius * self.radius - d.norm_squared()
    }

    pub fn ball_fraction(&self, w: &DVector<f64>) -> f64 {
        let d = w.rows(0, self.ball_dims) - self.center.rows(0, self.ball_dims);
        d.norm() / self.radius
    }

    /// Barrier value, `None` outside the interior.
    pub fn barrier(&self, w: &DVector<f64>) -> Option<f64> {
        let mut v = 0.0;
        for l in &self.lmis {
            let chol = Cholesky::new(l.eval(w))?;
            let lo = chol.l_dirty();
            for k in 0..l.dim() {
                let d = lo[(k, k)];
                if !(d > 0.0) {
                    return None;
                }
                v -= 2.0 * d.ln();
            }
        }
        if self.ball_dims > 0 {
            let s = self.ball_slack(w);
            if !(s > 0.0) {
                return None;
            }
            v -= s.ln();
        }
        Some(v)
    }

    fn derivatives(&self, w: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let n = self.n();
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        for l in &self.lmis {
            let chol = Cholesky::new(l.eval(w))?;
            let lo = chol.l();
            let k = l.dim();
            let mut scaled: Vec<Option<DMatrix<f64>>> = Vec::with_capacity(n);
            for mi in &l.m {
                if mi.iter().all(|v| *v == 0.0) {
                    scaled.push(None);
                    continue;
                }
                // L^{-1} M L^{-T}
                let a = lo.solve_lower_triangular(mi)?;
                let b = lo.solve_lower_triangular(&a.transpose())?;
                scaled.push(Some(b));
            }
            for i in 0..n {
                let Some(si) = &scaled[i] else { continue };
                g[i] -= si.trace();
                for j in 0..=i {
                    let Some(sj) = &scaled[j] else { continue };
                    let mut acc = 0.0;
                    for r in 0..k {
                        for c in 0..k {
                            acc += si[(r, c)] * sj[(c, r)];
                        }
                    }
                    h[(i, j)] += acc;
                    if i != j {
                        h[(j, i)] += acc;
                    }
                }
            }
        }
        if self.ball_dims > 0 {
            let s = self.ball_slack(w);
            if !(s > 0.0) {
                return None;
            }
            for i in 0..self.ball_dims {
                let di = w[i] - self.center[i];
                g[i] += 2.0 * di / s;
                h[(i, i)] += 2.0 / s;
                for j in 0..self.ball_dims {
                    let dj = w[j] - self.center[j];
                    h[(i, j)] += 4.0 * di * dj / (s * s);
                }
            }
        }
        Some((g, h))
    }

    fn newton_direction(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let n = h.nrows();
        let scale = (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
        let mut ridge = 0.0;
        for _ in 0..12 {
            let mut hh = h.clone();
            for i in 0..n {
                hh[(i, i)] += ridge;
            }
            if let Some(ch) = Cholesky::new(hh) {
                let d = ch.solve(rhs);
                if d.iter().all(|v| v.is_finite()) {
                    return Some(d);
                }
            }
            ridge = if ridge == 0.0 { 1e-14 * scale } else { ridge * 100.0 };
        }
        None
    }

    /// Damped Newton on `eta c^T w + barrier(w)` from a strictly feasible `w`.
    fn center(&self, mut w: DVector<f64>, eta: f64, steps: &mut usize) -> DVector<f64> {
        for _ in 0..200 {
            let Some((g, h)) = self.derivatives(&w) else { break };
            let grad = &self.cost * eta + g;
            let Some(dir) = Self::newton_direction(&h, &(-&grad)) else { break };
            let dec = -grad.dot(&dir);
            if !(dec > 1e-14) {
                break;
            }
            *steps += 1;
            let base = self.barrier(&w).unwrap_or(f64::INFINITY);
            let mut s = if dec > 0.25 { 1.0 / (1.0 + dec.sqrt()) } else { 1.0 };
            let mut accepted = false;
            for _ in 0..60 {
                let trial = &w + &dir * s;
                if let Some(v) = self.barrier(&trial) {
                    let change = eta * self.cost.dot(&dir) * s + (v - base);
                    if change <= -0.1 * s * dec || (change <= 0.0 && dec < 1e-9) {
                        w = trial;
                        accepted = true;
                        break;
                    }
                }
                s *= 0.5;
            }
            if !accepted || dec < 1e-11 {
                break;
            }
        }
        w
    }

    /// Follow the central path until the duality gap bound drops below `gap`
    /// or `stop` reports success.
    pub fn follow(&self, w0: DVector<f64>, gap: f64, stop: impl Fn(&DVector<f64>) -> bool) -> PathResult {
        let m: usize = self.lmis.iter().map(Lmi::dim).sum::<usize>() + usize::from(self.ball_dims > 0);
        let mut steps = 0;
        let mut eta = 1.0;
        let mut w = w0;
        loop {
            w = self.center(w, eta, &mut steps);
            if stop(&w) || (m as f64) / eta <= gap || eta > 1e18 {
                return PathResult { w, steps };
            }
            eta *= 8.0;
        }
    }

    /// [`Conic::follow`] inside balls of radius `scale * factor` for
    /// growing factors, stopping at the first solve that does not end on
    /// the ball boundary or whose end point passes `accept`. Returns the
    /// result and whether it ends on the boundary.
    pub fn follow_expanding(
        &mut self,
        scale: f64,
        w0: &DVector<f64>,
        gap: f64,
        stop: impl Fn(&DVector<f64>) -> bool,
        accept: impl Fn(&DVector<f64>) -> bool,
    ) -> (PathResult, bool) {
        let mut steps = 0;
        let mut last = None;
        for factor in RADIUS_FACTORS {
            self.radius = factor * scale;
            let res = self.follow(w0.clone(), gap, &stop);
            steps += res.steps;
            let at_radius = self.ball_dims > 0 && self.ball_fraction(&res.w) > 0.99;
            let done = !at_radius || accept(&res.w);
            last = Some((res.w, at_radius));
            if done {
                break;
            }
        }
        let (w, at_radius) = last.expect("at least one radius");
        (PathResult { w, steps }, at_radius)
    }
}
