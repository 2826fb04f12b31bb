//! Affine symmetric-matrix systems and the constructors that emit them.

pub mod builders;
pub mod derive;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelError;

pub use builders::*;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmiError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("variable `{0}` is used but not declared")]
    UndeclaredVariable(String),
    #[error("variable `{0}` declared twice")]
    DuplicateVariable(String),
    #[error("block `{label}` has {got} entries, expected {expected}")]
    BadBlockShape { label: String, got: usize, expected: usize },
}

/// `constant + Σ coef · var`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub constant: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub terms: BTreeMap<String, f64>,
}

impl Affine {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { constant: c, terms: BTreeMap::new() }
    }

    pub fn var(name: &str) -> Self {
        Self::term(name, 1.0)
    }

    pub fn term(name: &str, coef: f64) -> Self {
        let mut terms = BTreeMap::new();
        if coef != 0.0 {
            terms.insert(name.to_string(), coef);
        }
        Self { constant: 0.0, terms }
    }

    pub fn coef(&self, name: &str) -> f64 {
        self.terms.get(name).copied().unwrap_or(0.0)
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.is_empty()
    }

    /// Value at an assignment; missing variables read as zero.
    pub fn eval(&self, assignment: &BTreeMap<String, f64>) -> f64 {
        self.terms
            .iter()
            .fold(self.constant, |acc, (k, c)| acc + c * assignment.get(k).copied().unwrap_or(0.0))
    }

    /// Substitute fixed values for some variables.
    pub fn substitute(&self, values: &BTreeMap<String, f64>) -> Affine {
        let mut out = Affine::constant(self.constant);
        for (k, c) in &self.terms {
            match values.get(k) {
                Some(v) => out.constant += c * v,
                None => out.add_term(k, *c),
            }
        }
        out
    }

    pub fn add_term(&mut self, name: &str, coef: f64) {
        if coef == 0.0 {
            return;
        }
        let e = self.terms.entry(name.to_string()).or_insert(0.0);
        *e += coef;
        if *e == 0.0 {
            self.terms.remove(name);
        }
    }

    pub fn scale(&self, s: f64) -> Affine {
        if s == 0.0 {
            return Affine::zero();
        }
        Affine {
            constant: self.constant * s,
            terms: self.terms.iter().map(|(k, v)| (k.clone(), v * s)).collect(),
        }
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.terms.keys().map(String::as_str)
    }
}

impl From<f64> for Affine {
    fn from(c: f64) -> Self {
        Affine::constant(c)
    }
}

impl fmt::Display for Affine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        if self.constant != 0.0 || self.terms.is_empty() {
            write!(f, "{}", self.constant)?;
            first = false;
        }
        for (k, c) in &self.terms {
            if first {
                write!(f, "{c}·{k}")?;
            } else if *c < 0.0 {
                write!(f, " - {}·{k}", -c)?;
            } else {
                write!(f, " + {c}·{k}")?;
            }
            first = false;
        }
        Ok(())
    }
}

impl AddAssign<&Affine> for Affine {
    fn add_assign(&mut self, rhs: &Affine) {
        self.constant += rhs.constant;
        for (k, c) in &rhs.terms {
            self.add_term(k, *c);
        }
    }
}

impl SubAssign<&Affine> for Affine {
    fn sub_assign(&mut self, rhs: &Affine) {
        self.constant -= rhs.constant;
        for (k, c) in &rhs.terms {
            self.add_term(k, -c);
        }
    }
}

impl Add for Affine {
    type Output = Affine;
    fn add(mut self, rhs: Affine) -> Affine {
        self += &rhs;
        self
    }
}

impl Add<&Affine> for &Affine {
    type Output = Affine;
    fn add(self, rhs: &Affine) -> Affine {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub for Affine {
    type Output = Affine;
    fn sub(mut self, rhs: Affine) -> Affine {
        self -= &rhs;
        self
    }
}

impl Sub<&Affine> for &Affine {
    type Output = Affine;
    fn sub(self, rhs: &Affine) -> Affine {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl Neg for Affine {
    type Output = Affine;
    fn neg(self) -> Affine {
        self.scale(-1.0)
    }
}

impl Mul<f64> for Affine {
    type Output = Affine;
    fn mul(self, s: f64) -> Affine {
        self.scale(s)
    }
}

impl Mul<f64> for &Affine {
    type Output = Affine;
    fn mul(self, s: f64) -> Affine {
        self.scale(s)
    }
}

impl Mul<Affine> for f64 {
    type Output = Affine;
    fn mul(self, a: Affine) -> Affine {
        a.scale(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Free,
    Nonnegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub sign: Sign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    NegSemidef,
    PosSemidef,
}

/// Symmetric matrix of affine entries, stored as its lower triangle in
/// row-major order: `(0,0), (1,0), (1,1), (2,0), ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub label: String,
    pub sense: Sense,
    pub dim: usize,
    pub lower: Vec<Affine>,
}

fn tri_index(i: usize, j: usize) -> usize {
    let (r, c) = if i >= j { (i, j) } else { (j, i) };
    r * (r + 1) / 2 + c
}

impl Block {
    /// Build from a full square matrix; only the lower triangle is read.
    pub fn from_rows(label: &str, sense: Sense, rows: Vec<Vec<Affine>>) -> Result<Self, LmiError> {
        let dim = rows.len();
        let mut lower = Vec::with_capacity(dim * (dim + 1) / 2);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(LmiError::BadBlockShape { label: label.into(), got: row.len(), expected: dim });
            }
            lower.extend(row.into_iter().take(i + 1));
        }
        Ok(Self { label: label.into(), sense, dim, lower })
    }

    pub fn zeros(label: &str, sense: Sense, dim: usize) -> Self {
        Self { label: label.into(), sense, dim, lower: vec![Affine::zero(); dim * (dim + 1) / 2] }
    }

    pub fn get(&self, i: usize, j: usize) -> &Affine {
        &self.lower[tri_index(i, j)]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut Affine {
        &mut self.lower[tri_index(i, j)]
    }

    /// Numeric matrix at an assignment, in the block's own sense.
    pub fn eval(&self, assignment: &BTreeMap<String, f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j).eval(assignment))
    }

    /// Numeric matrix normalised so that the constraint reads `M ⪯ 0`.
    pub fn eval_nsd(&self, assignment: &BTreeMap<String, f64>) -> DMatrix<f64> {
        let m = self.eval(assignment);
        match self.sense {
            Sense::NegSemidef => m,
            Sense::PosSemidef => -m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equality {
    pub label: String,
    pub expr: Affine,
}

/// Blocks, equalities and sign constraints over named scalar variables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LmiSystem {
    pub name: String,
    pub variables: Vec<Variable>,
    pub blocks: Vec<Block>,
    pub equalities: Vec<Equality>,
}

impl LmiSystem {
    pub fn new(name: &str) -> Self {
        Self { name: name.into(), ..Default::default() }
    }

    /// Declare a variable (idempotent for an identical redeclaration) and return it as an expression.
    pub fn declare(&mut self, name: &str, sign: Sign) -> Affine {
        match self.variables.iter_mut().find(|v| v.name == name) {
            Some(v) => {
                if sign == Sign::Nonnegative {
                    v.sign = Sign::Nonnegative;
                }
            }
            None => self.variables.push(Variable { name: name.into(), sign }),
        }
        Affine::var(name)
    }

    pub fn nonneg(&mut self, name: &str) -> Affine {
        self.declare(name, Sign::Nonnegative)
    }

    pub fn free(&mut self, name: &str) -> Affine {
        self.declare(name, Sign::Free)
    }

    pub fn push_block(&mut self, block: Block) {
        self.blocks.push(block);
    }

    pub fn push_equality(&mut self, label: &str, expr: Affine) {
        self.equalities.push(Equality { label: label.into(), expr });
    }

    pub fn variable(&self, name: &str) -> Option<&Variable> {
        self.variables.iter().find(|v| v.name == name)
    }

    /// Structural checks: every referenced variable is declared once.
    pub fn validate(&self) -> Result<(), LmiError> {
        let mut declared = BTreeSet::new();
        for v in &self.variables {
            if !declared.insert(v.name.as_str()) {
                return Err(LmiError::DuplicateVariable(v.name.clone()));
            }
        }
        for b in &self.blocks {
            let expected = b.dim * (b.dim + 1) / 2;
            if b.lower.len() != expected {
                return Err(LmiError::BadBlockShape { label: b.label.clone(), got: b.lower.len(), expected });
            }
        }
        let exprs = self.blocks.iter().flat_map(|b| b.lower.iter()).chain(self.equalities.iter().map(|e| &e.expr));
        for e in exprs {
            for name in e.variables() {
                if !declared.contains(name) {
                    return Err(LmiError::UndeclaredVariable(name.to_string()));
                }
            }
        }
        Ok(())
    }

    /// Fix some variables to numbers and drop them from the declaration list.
    pub fn substitute(&self, values: &BTreeMap<String, f64>) -> LmiSystem {
        LmiSystem {
            name: self.name.clone(),
            variables: self.variables.iter().filter(|v| !values.contains_key(&v.name)).cloned().collect(),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    label: b.label.clone(),
                    sense: b.sense,
                    dim: b.dim,
                    lower: b.lower.iter().map(|e| e.substitute(values)).collect(),
                })
                .collect(),
            equalities: self
                .equalities
                .iter()
                .map(|e| Equality { label: e.label.clone(), expr: e.expr.substitute(values) })
                .collect(),
        }
    }

    /// Largest sense-normalised eigenvalue of each block at an assignment.
    pub fn block_residuals(&self, assignment: &BTreeMap<String, f64>) -> Vec<f64> {
        self.blocks.iter().map(|b| crate::numerics::max_eigenvalue(&b.eval_nsd(assignment))).collect()
    }

    pub fn equality_residuals(&self, assignment: &BTreeMap<String, f64>) -> Vec<f64> {
        self.equalities.iter().map(|e| e.expr.eval(assignment).abs()).collect()
    }

    /// Most negative value among sign-constrained variables, floored at zero.
    pub fn sign_violation(&self, assignment: &BTreeMap<String, f64>) -> f64 {
        self.variables
            .iter()
            .filter(|v| v.sign == Sign::Nonnegative)
            .map(|v| -assignment.get(&v.name).copied().unwrap_or(0.0))
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

/// One term `b^T F + Tr(A G)` of a primal problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalTerm {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl PrimalTerm {
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>) -> Self {
        Self { a, b }
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        let n = self.a.len();
        DMatrix::from_fn(n, n, |i, j| self.a[i][j])
    }

    pub fn eval(&self, g: &DMatrix<f64>, f: &[f64]) -> f64 {
        let lin: f64 = self.b.iter().zip(f).map(|(x, y)| x * y).sum();
        lin + self.a_matrix().component_mul(g).sum()
    }

    fn is_zero(&self) -> bool {
        self.a.iter().flatten().all(|v| *v == 0.0) && self.b.iter().all(|v| *v == 0.0)
    }
}

/// `max b0^T F + Tr(A0 G)` over `G ⪰ 0` and `F` subject to
/// `b_k^T F + Tr(A_k G) ≥ 0` and an optional normalisation `= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalSdp {
    pub gram_dimension: usize,
    pub f_dimension: usize,
    pub objective: PrimalTerm,
    pub constraints: Vec<PrimalTerm>,
    #[serde(default)]
    pub normalization: Option<PrimalTerm>,
}

impl PrimalSdp {
    pub fn validate(&self) -> Result<(), LmiError> {
        let terms = std::iter::once(&self.objective).chain(&self.constraints).chain(self.normalization.as_ref());
        for t in terms {
            if t.a.len() != self.gram_dimension || t.a.iter().any(|r| r.len() != self.gram_dimension) {
                return Err(LmiError::InvalidArgument("primal matrix has wrong dimension".into()));
            }
            for i in 0..self.gram_dimension {
                for j in 0..i {
                    if t.a[i][j] != t.a[j][i] {
                        return Err(LmiError::InvalidArgument("primal matrix is not symmetric".into()));
                    }
                }
            }
            if t.b.len() != self.f_dimension {
                return Err(LmiError::InvalidArgument("primal vector has wrong dimension".into()));
            }
        }
        Ok(())
    }

    pub fn is_trivial(&self) -> bool {
        self.objective.is_zero()
    }
}
