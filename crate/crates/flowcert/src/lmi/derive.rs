//! Mechanical derivation of `dV/dt + τ V + Σ λ (interpolation) ⪯ 0`
//! for quadratic-plus-function-value Lyapunov candidates.
//!
//! Every vector of the analysis (states, their derivatives, gradients)
//! is a fixed numeric combination of a Gram basis. The Lyapunov weights
//! may be affine in unknowns, which keeps the resulting block affine.

use super::{Affine, Block, LmiSystem, Sense};

/// A scalar coefficient together with its time derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct Coef {
    pub value: Affine,
    pub rate: Affine,
}

impl Coef {
    pub fn fixed(value: f64, rate: f64) -> Self {
        Self { value: Affine::constant(value), rate: Affine::constant(rate) }
    }

    pub fn zero() -> Self {
        Self::fixed(0.0, 0.0)
    }

    /// Time-invariant unknown.
    pub fn static_unknown(value: Affine) -> Self {
        Self { value, rate: Affine::zero() }
    }

    pub fn new(value: Affine, rate: Affine) -> Self {
        Self { value, rate }
    }
}

/// Point at which `f` is sampled: the minimiser or a numbered slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Point {
    Optimum,
    Slot(usize),
}

#[derive(Debug, Clone)]
struct Slot {
    name: String,
    position: Vec<f64>,
    velocity: Vec<f64>,
    gradient: usize,
}

#[derive(Debug, Clone)]
struct StateVector {
    position: Vec<f64>,
    velocity: Vec<f64>,
}

/// Describes one Gram-based Lyapunov analysis.
#[derive(Debug, Clone)]
pub struct GramModel {
    dim: usize,
    mu: f64,
    slots: Vec<Slot>,
    states: Vec<StateVector>,
}

fn unit(dim: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[k] = 1.0;
    v
}

impl GramModel {
    pub fn new(dim: usize, mu: f64) -> Self {
        Self { dim, mu, slots: Vec::new(), states: Vec::new() }
    }

    pub fn unit(&self, k: usize) -> Vec<f64> {
        unit(self.dim, k)
    }

    /// Register a sample point `y` with derivative `ẏ` and gradient basis index.
    pub fn slot(&mut self, name: &str, position: Vec<f64>, velocity: Vec<f64>, gradient: usize) -> Point {
        self.slots.push(Slot { name: name.into(), position, velocity, gradient });
        Point::Slot(self.slots.len() - 1)
    }

    /// Register a component of the quadratic part together with its derivative.
    pub fn state(&mut self, position: Vec<f64>, velocity: Vec<f64>) -> usize {
        self.states.push(StateVector { position, velocity });
        self.states.len() - 1
    }

    fn point_vec(&self, p: Point) -> Vec<f64> {
        match p {
            Point::Optimum => vec![0.0; self.dim],
            Point::Slot(k) => self.slots[k].position.clone(),
        }
    }

    fn grad_vec(&self, p: Point) -> Vec<f64> {
        match p {
            Point::Optimum => vec![0.0; self.dim],
            Point::Slot(k) => unit(self.dim, self.slots[k].gradient),
        }
    }

    fn add_inner(m: &mut [Vec<Affine>], coef: &Affine, u: &[f64], w: &[f64]) {
        if coef.is_zero() {
            return;
        }
        let n = u.len();
        for i in 0..n {
            for j in 0..n {
                let s = 0.5 * (u[i] * w[j] + u[j] * w[i]);
                if s != 0.0 {
                    m[i][j] += &coef.scale(s);
                }
            }
        }
    }

    fn add_pair(&self, m: &mut [Vec<Affine>], fcoef: &mut [Affine], weight: &Affine, i: Point, j: Point) {
        if let Point::Slot(k) = i {
            fcoef[k] += weight;
        }
        if let Point::Slot(k) = j {
            fcoef[k] -= weight;
        }
        let diff: Vec<f64> = self.point_vec(i).iter().zip(self.point_vec(j)).map(|(a, b)| a - b).collect();
        Self::add_inner(m, &(-weight.clone()), &self.grad_vec(j), &diff);
        Self::add_inner(m, &weight.scale(-0.5 * self.mu), &diff, &diff);
    }

    /// Emit the derivative block and one equality per sampled point.
    ///
    /// `weights[k]` multiplies `f(slot k) - f*`; `quad` is a symmetric
    /// matrix over the registered states (lower triangle is read);
    /// `pairs` lists `(multiplier, i, j)` for the inequality
    /// `f_i ≥ f_j + <g_j, y_i - y_j> + mu/2 |y_i - y_j|²`.
    pub fn derivative_block(
        &self,
        sys: &mut LmiSystem,
        label: &str,
        weights: &[(Point, Coef)],
        quad: &[Vec<Coef>],
        tau: f64,
        pairs: &[(Affine, Point, Point)],
    ) -> Block {
        let n = self.dim;
        let mut m = vec![vec![Affine::zero(); n]; n];
        let mut fcoef = vec![Affine::zero(); self.slots.len()];
        for (p, c) in weights {
            let Point::Slot(k) = *p else { continue };
            fcoef[k] += &c.rate;
            fcoef[k] += &c.value.scale(tau);
            let s = &self.slots[k];
            Self::add_inner(&mut m, &c.value, &unit(n, s.gradient), &s.velocity);
        }
        for (i, si) in self.states.iter().enumerate() {
            for (j, sj) in self.states.iter().enumerate() {
                let q = if i >= j { &quad[i][j] } else { &quad[j][i] };
                let rate = &q.rate + &q.value.scale(tau);
                Self::add_inner(&mut m, &rate, &si.position, &sj.position);
                Self::add_inner(&mut m, &q.value.scale(2.0), &si.position, &sj.velocity);
            }
        }
        for (w, i, j) in pairs {
            self.add_pair(&mut m, &mut fcoef, w, *i, *j);
        }
        for (k, e) in fcoef.into_iter().enumerate() {
            sys.push_equality(&format!("{label}:f({})", self.slots[k].name), e);
        }
        Block::from_rows(label, Sense::NegSemidef, m).expect("square by construction")
    }

    /// Emit `V - Σ ν (interpolation) ⪰ 0` with its value equalities, a
    /// sufficient condition for `V ≥ 0`.
    pub fn value_block(
        &self,
        sys: &mut LmiSystem,
        label: &str,
        weights: &[(Point, Affine)],
        quad: &[Vec<Affine>],
        pairs: &[(Affine, Point, Point)],
    ) -> Block {
        let n = self.dim;
        let mut m = vec![vec![Affine::zero(); n]; n];
        let mut fcoef = vec![Affine::zero(); self.slots.len()];
        for (p, c) in weights {
            if let Point::Slot(k) = *p {
                fcoef[k] += c;
            }
        }
        for (i, si) in self.states.iter().enumerate() {
            for (j, sj) in self.states.iter().enumerate() {
                let q = if i >= j { &quad[i][j] } else { &quad[j][i] };
                Self::add_inner(&mut m, q, &si.position, &sj.position);
            }
        }
        for (w, i, j) in pairs {
            self.add_pair(&mut m, &mut fcoef, &(-w.clone()), *i, *j);
        }
        for (k, e) in fcoef.into_iter().enumerate() {
            sys.push_equality(&format!("{label}:f({})", self.slots[k].name), e);
        }
        Block::from_rows(label, Sense::PosSemidef, m).expect("square by construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_flow_block_matches_hand_derivation() {
        // basis [x, g]; x' = -g
        let mut gm = GramModel::new(2, 0.1);
        let slot = gm.slot("X", vec![1.0, 0.0], vec![0.0, -1.0], 1);
        gm.state(vec![1.0, 0.0], vec![0.0, -1.0]);
        let mut sys = LmiSystem::new("gf");
        let l1 = sys.nonneg("l1");
        let l2 = sys.nonneg("l2");
        let b = gm.derivative_block(
            &mut sys,
            "S",
            &[(slot, Coef::fixed(1.0, 0.0))],
            &[vec![Coef::fixed(0.0, 0.0)]],
            0.2,
            &[(l1, Point::Optimum, slot), (l2, slot, Point::Optimum)],
        );
        assert_eq!(b.get(0, 0), &(Affine::term("l1", -0.05) + Affine::term("l2", -0.05)));
        assert_eq!(b.get(1, 0), &Affine::term("l1", 0.5));
        assert_eq!(b.get(1, 1), &Affine::constant(-1.0));
        let eq = &sys.equalities[0].expr;
        assert_eq!(eq.constant, 0.2);
        assert_eq!(eq.coef("l1"), -1.0);
        assert_eq!(eq.coef("l2"), 1.0);
    }
}
