//! Trajectories of the flows on concrete objectives: classical RK4 for
//! the deterministic dynamics and Euler-Maruyama ensembles for the SDEs.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Averaging, FlowSpec, ModelError, Profile, SecondOrderAveraging};
use crate::worst_case::interpolant;
use crate::model::InterpolationTriplet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid simulation input: {0}")]
    InvalidInput(String),
    #[error("state became non-finite at t = {t}")]
    BlowUp { t: f64 },
}

type Result<T> = std::result::Result<T, SimError>;

/// Value and gradient oracle.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    /// `f*`
    fn min_value(&self) -> f64 {
        0.0
    }
}

/// `f(x) = 1/2 Σ c_i x_i²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quadratic {
    pub curvatures: Vec<f64>,
}

impl Quadratic {
    pub fn new(curvatures: Vec<f64>) -> Result<Self> {
        if curvatures.is_empty() || curvatures.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(SimError::InvalidInput("curvatures must be finite and >= 0".into()));
        }
        Ok(Self { curvatures })
    }

    /// `f(x) = mu/2 |x|²` in dimension `d`.
    pub fn isotropic(mu: f64, d: usize) -> Result<Self> {
        Self::new(vec![mu; d])
    }

    pub fn largest_curvature(&self) -> f64 {
        self.curvatures.iter().copied().fold(0.0, f64::max)
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.curvatures.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.curvatures.iter().zip(x).map(|(c, v)| c * v * v).sum::<f64>()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for ((o, c), v) in out.iter_mut().zip(&self.curvatures).zip(x) {
            *o = c * v;
        }
    }
}

/// The max-of-quadratics function through a set of triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolated {
    pub triplets: Vec<InterpolationTriplet>,
    pub mu: f64,
}

impl Objective for Interpolated {
    fn dim(&self) -> usize {
        self.triplets.first().map_or(0, |t| t.x.len())
    }

    fn value(&self, x: &[f64]) -> f64 {
        interpolant(&self.triplets, self.mu, x).0
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&interpolant(&self.triplets, self.mu, x).1);
    }

    fn min_value(&self) -> f64 {
        self.triplets.iter().map(|t| t.f).fold(f64::INFINITY, f64::min)
    }
}

/// Constant diffusion `Sigma = S Sᵀ` given by its factor `S` (`d × k`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub factor: Vec<Vec<f64>>,
}

impl NoiseModel {
    /// Rank one, along `direction`, with `Tr(Sigma) = trace`.
    pub fn rank_one(direction: &[f64], trace: f64) -> Result<Self> {
        let n = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 0.0) || !(trace >= 0.0) {
            return Err(SimError::InvalidInput("rank-one noise needs a nonzero direction and trace >= 0".into()));
        }
        let s = trace.sqrt() / n;
        Ok(Self { factor: direction.iter().map(|v| vec![v * s]).collect() })
    }

    /// `Sigma = (trace / d) I`.
    pub fn isotropic(d: usize, trace: f64) -> Self {
        let s = (trace / d as f64).sqrt();
        Self { factor: (0..d).map(|i| (0..d).map(|j| if i == j { s } else { 0.0 }).collect()).collect() }
    }

    pub fn zero(d: usize) -> Self {
        Self { factor: vec![vec![0.0]; d] }
    }

    pub fn trace(&self) -> f64 {
        self.factor.iter().flatten().map(|v| v * v).sum()
    }

    fn rank(&self) -> usize {
        self.factor.first().map_or(0, Vec::len)
    }
}

/// Integration step and recording cadence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
    /// Record every this many steps (the initial time is always recorded).
    pub record_every: usize,
}

impl SimOptions {
    fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !(self.t1 > self.t0) || self.record_every == 0 {
            return Err(SimError::InvalidInput(format!(
                "need dt > 0, t1 > t0 and record_every >= 1 (dt = {}, span = [{}, {}])",
                self.dt, self.t0, self.t1
            )));
        }
        Ok(((self.t1 - self.t0) / self.dt).round() as usize)
    }

    fn record_times(&self, n: usize) -> Vec<f64> {
        std::iter::once(0).chain((1..=n).filter(|k| k % self.record_every == 0)).map(|k| self.t0 + k as f64 * self.dt).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    /// Positions (ensemble means for SDEs).
    pub positions: Vec<Vec<f64>>,
    pub velocities: Option<Vec<Vec<f64>>>,
    pub averages: Option<Vec<Vec<f64>>>,
    /// `f - f*` at the reported point (the average when averaging is on).
    pub f_values: Vec<f64>,
    pub f_stderr: Option<Vec<f64>>,
    pub bound_values: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub n_paths: Option<usize>,
}

impl TrajectoryRecord {
    pub fn with_bound(mut self, bound: impl Fn(f64) -> f64) -> Self {
        self.bound_values = Some(self.times.iter().map(|&t| bound(t)).collect());
        self
    }

    /// CSV with columns `time,f_mean,f_stderr,bound,margin`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "time,f_mean,f_stderr,bound,margin")?;
        for (k, t) in self.times.iter().enumerate() {
            let f = self.f_values[k];
            let se = self.f_stderr.as_ref().map_or(0.0, |s| s[k]);
            match &self.bound_values {
                Some(b) => writeln!(out, "{t:e},{f:e},{se:e},{:e},{:e}", b[k], b[k] - f)?,
                None => writeln!(out, "{t:e},{f:e},{se:e},,")?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GradientAt {
    Iterate,
    Average,
}

/// Right-hand side of a flow on the stacked state `[x, v?, x̄?]`.
struct Dynamics<'a> {
    f: &'a dyn Objective,
    d: usize,
    second_order: bool,
    averaging: Option<AverageSpeed<'a>>,
    gradient_at: GradientAt,
    step: Option<&'a Profile>,
    damping: Damping<'a>,
}

enum AverageSpeed<'a> {
    Uniform,
    Weighted(&'a Profile),
}

enum Damping<'a> {
    None,
    Constant(f64),
    Varying(&'a Profile),
}

impl<'a> Dynamics<'a> {
    fn new(flow: &'a FlowSpec, f: &'a dyn Objective) -> Self {
        let d = f.dim();
        let base = Dynamics {
            f,
            d,
            second_order: false,
            averaging: None,
            gradient_at: GradientAt::Iterate,
            step: None,
            damping: Damping::None,
        };
        match flow {
            FlowSpec::GradientFlow => base,
            FlowSpec::NonAutonomousGradientFlow { alpha } => Dynamics { step: Some(alpha), ..base },
            FlowSpec::DampedOscillator { beta } => Dynamics { second_order: true, damping: Damping::Constant(*beta), ..base },
            FlowSpec::SecondOrderFlow { beta } => Dynamics { second_order: true, damping: Damping::Varying(beta), ..base },
            FlowSpec::FirstOrderSde { step, averaging, .. } => {
                let (averaging, gradient_at) = match averaging {
                    Averaging::None => (None, GradientAt::Iterate),
                    Averaging::PolyakRuppert => (Some(AverageSpeed::Uniform), GradientAt::Iterate),
                    Averaging::Weighted { weight } => (Some(AverageSpeed::Weighted(weight)), GradientAt::Iterate),
                    Averaging::Primal => (Some(AverageSpeed::Uniform), GradientAt::Average),
                };
                Dynamics { step: Some(step), averaging, gradient_at, ..base }
            }
            FlowSpec::SecondOrderSde { beta, step, averaging, .. } => {
                let (averaging, gradient_at) = match averaging {
                    SecondOrderAveraging::None => (None, GradientAt::Iterate),
                    SecondOrderAveraging::PolyakRuppert => (Some(AverageSpeed::Uniform), GradientAt::Iterate),
                    SecondOrderAveraging::Primal => (Some(AverageSpeed::Uniform), GradientAt::Average),
                };
                Dynamics { second_order: true, damping: Damping::Varying(beta), step: Some(step), averaging, gradient_at, ..base }
            }
        }
    }

    fn len(&self) -> usize {
        self.d * (1 + usize::from(self.second_order) + usize::from(self.averaging.is_some()))
    }

    fn avg_offset(&self) -> usize {
        self.d * (1 + usize::from(self.second_order))
    }

    /// Offset of the block that receives the noise.
    fn noise_offset(&self) -> usize {
        if self.second_order {
            self.d
        } else {
            0
        }
    }

    fn initial_state(&self, x0: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.len()];
        y[..self.d].copy_from_slice(x0);
        if self.averaging.is_some() {
            let o = self.avg_offset();
            y[o..o + self.d].copy_from_slice(x0);
        }
        y
    }

    fn check_start(&self, t0: f64) -> Result<()> {
        if self.averaging.is_some() && !(t0 > 0.0) {
            return Err(SimError::InvalidInput(format!("averaged dynamics start at t0 > 0 (for example t0 = dt), got {t0}")));
        }
        if let Some(h) = self.step {
            h.eval(t0)?;
        }
        if let Damping::Varying(b) = self.damping {
            b.eval(t0)?;
        }
        Ok(())
    }

    fn step_at(&self, t: f64) -> f64 {
        self.step.map_or(1.0, |h| h.eval(t).unwrap_or(f64::NAN))
    }

    fn speed_at(&self, t: f64) -> f64 {
        match &self.averaging {
            None => 0.0,
            Some(AverageSpeed::Uniform) => 1.0 / t,
            Some(AverageSpeed::Weighted(u)) => {
                let mass = u.integral(0.0, t).unwrap_or(f64::NAN);
                u.eval(t).unwrap_or(f64::NAN) / mass
            }
        }
    }

    fn damping_at(&self, t: f64) -> f64 {
        match self.damping {
            Damping::None => 0.0,
            Damping::Constant(b) => b,
            Damping::Varying(p) => p.eval(t).unwrap_or(f64::NAN),
        }
    }

    fn drift(&self, t: f64, y: &[f64], dy: &mut [f64], g: &mut [f64]) {
        let d = self.d;
        let h = self.step_at(t);
        let at = match self.gradient_at {
            GradientAt::Iterate => &y[..d],
            GradientAt::Average => &y[self.avg_offset()..self.avg_offset() + d],
        };
        self.f.gradient(at, g);
        if self.second_order {
            let beta = self.damping_at(t);
            for i in 0..d {
                dy[i] = y[d + i];
                dy[d + i] = -beta * y[d + i] - h * g[i];
            }
        } else {
            for i in 0..d {
                dy[i] = -h * g[i];
            }
        }
        if self.averaging.is_some() {
            let k = self.speed_at(t);
            let o = self.avg_offset();
            for i in 0..d {
                dy[o + i] = k * (y[i] - y[o + i]);
            }
        }
    }

    fn reported_gap(&self, y: &[f64]) -> f64 {
        let p = if self.averaging.is_some() { &y[self.avg_offset()..self.avg_offset() + self.d] } else { &y[..self.d] };
        self.f.value(p) - self.f.min_value()
    }
}

fn check_inputs(flow: &FlowSpec, f: &dyn Objective, x0: &[f64]) -> Result<()> {
    flow.validate()?;
    if x0.len() != f.dim() {
        return Err(SimError::InvalidInput(format!("x0 has dimension {}, objective {}", x0.len(), f.dim())));
    }
    Ok(())
}

struct Snapshot {
    positions: Vec<Vec<f64>>,
    velocities: Vec<Vec<f64>>,
    averages: Vec<Vec<f64>>,
}

impl Snapshot {
    fn new() -> Self {
        Self { positions: Vec::new(), velocities: Vec::new(), averages: Vec::new() }
    }

    fn push(&mut self, dyn_: &Dynamics, y: &[f64]) {
        let d = dyn_.d;
        self.positions.push(y[..d].to_vec());
        if dyn_.second_order {
            self.velocities.push(y[d..2 * d].to_vec());
        }
        if dyn_.averaging.is_some() {
            let o = dyn_.avg_offset();
            self.averages.push(y[o..o + d].to_vec());
        }
    }
}

/// Classical RK4 on the deterministic part of `flow`. Second-order flows
/// start at rest; averaged flows start with `X̄ = X`.
pub fn integrate_ode(flow: &FlowSpec, f: &dyn Objective, x0: &[f64], opts: &SimOptions) -> Result<TrajectoryRecord> {
    check_inputs(flow, f, x0)?;
    let n = opts.steps()?;
    let dynamics = Dynamics::new(flow, f);
    dynamics.check_start(opts.t0)?;
    let m = dynamics.len();
    let mut y = dynamics.initial_state(x0);
    let (mut k1, mut k2, mut k3, mut k4, mut tmp, mut g) =
        (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; f.dim()]);
    let mut snap = Snapshot::new();
    let mut f_values = Vec::new();
    snap.push(&dynamics, &y);
    f_values.push(dynamics.reported_gap(&y));
    let dt = opts.dt;
    for step in 0..n {
        let t = opts.t0 + step as f64 * dt;
        dynamics.drift(t, &y, &mut k1, &mut g);
        for i in 0..m {
            tmp[i] = y[i] + 0.5 * dt * k1[i];
        }
        dynamics.drift(t + 0.5 * dt, &tmp, &mut k2, &mut g);
        for i in 0..m {
            tmp[i] = y[i] + 0.5 * dt * k2[i];
        }
        dynamics.drift(t + 0.5 * dt, &tmp, &mut k3, &mut g);
        for i in 0..m {
            tmp[i] = y[i] + dt * k3[i];
        }
        dynamics.drift(t + dt, &tmp, &mut k4, &mut g);
        for i in 0..m {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SimError::BlowUp { t: t + dt });
        }
        if (step + 1) % opts.record_every == 0 {
            snap.push(&dynamics, &y);
            f_values.push(dynamics.reported_gap(&y));
        }
    }
    Ok(TrajectoryRecord {
        times: opts.record_times(n),
        positions: snap.positions,
        velocities: dynamics.second_order.then_some(snap.velocities),
        averages: dynamics.averaging.is_some().then_some(snap.averages),
        f_values,
        f_stderr: None,
        bound_values: None,
        seed: None,
        n_paths: None,
    })
}

/// Ensemble settings for [`simulate_sde`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub n_paths: usize,
    pub seed: u64,
}

/// Paths per work unit; fixed so the reduction order never depends on scheduling.
const CHUNK: usize = 16;

struct ChunkSums {
    gaps: Vec<Vec<f64>>,
    state: Vec<Vec<f64>>,
}

fn noise_gamma(flow: &FlowSpec) -> Result<f64> {
    match flow {
        FlowSpec::FirstOrderSde { gamma, .. } | FlowSpec::SecondOrderSde { gamma, .. } => Ok(*gamma),
        other => Err(SimError::InvalidInput(format!("simulate_sde needs an SDE flow, got {other:?}"))),
    }
}

/// Euler-Maruyama ensemble. Path `p` draws its noise from ChaCha8 keyed by
/// `(seed, stream = p)`, one fixed-size block of normals per step, so the
/// record is bit-exact for identical inputs.
pub fn simulate_sde(
    flow: &FlowSpec,
    f: &dyn Objective,
    noise: &NoiseModel,
    x0: &[f64],
    opts: &SimOptions,
    ensemble: &Ensemble,
) -> Result<TrajectoryRecord> {
    check_inputs(flow, f, x0)?;
    let gamma = noise_gamma(flow)?;
    if ensemble.n_paths == 0 {
        return Err(SimError::InvalidInput("n_paths must be >= 1".into()));
    }
    if noise.factor.len() != f.dim() || noise.factor.iter().any(|r| r.len() != noise.rank()) {
        return Err(SimError::InvalidInput("noise factor must be d × k".into()));
    }
    let n = opts.steps()?;
    let dynamics = Dynamics::new(flow, f);
    dynamics.check_start(opts.t0)?;
    let m = dynamics.len();
    let records = opts.record_times(n).len();
    let chunks: Vec<(usize, usize)> =
        (0..ensemble.n_paths).step_by(CHUNK).map(|s| (s, (s + CHUNK).min(ensemble.n_paths))).collect();
    let sums: Vec<ChunkSums> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut out = ChunkSums { gaps: Vec::with_capacity(hi - lo), state: vec![vec![0.0; m]; records] };
            for p in lo..hi {
                let mut gaps = Vec::with_capacity(records);
                run_path(&dynamics, noise, gamma, x0, opts, n, ensemble.seed, p as u64, |k, y| {
                    gaps.push(dynamics.reported_gap(y));
                    for (s, v) in out.state[k].iter_mut().zip(y) {
                        *s += v;
                    }
                })?;
                out.gaps.push(gaps);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let np = ensemble.n_paths as f64;
    let mut state = vec![vec![0.0; m]; records];
    for c in &sums {
        for (acc, s) in state.iter_mut().zip(&c.state) {
            for (a, v) in acc.iter_mut().zip(s) {
                *a += v;
            }
        }
    }
    let all: Vec<&Vec<f64>> = sums.iter().flat_map(|c| &c.gaps).collect();
    let mut f_values = Vec::with_capacity(records);
    let mut f_stderr = Vec::with_capacity(records);
    for k in 0..records {
        let mean = all.iter().map(|g| g[k]).sum::<f64>() / np;
        let var = if ensemble.n_paths > 1 {
            all.iter().map(|g| (g[k] - mean).powi(2)).sum::<f64>() / (np - 1.0)
        } else {
            0.0
        };
        f_values.push(mean);
        f_stderr.push((var / np).sqrt());
    }
    if f_values.iter().any(|v| !v.is_finite()) {
        return Err(SimError::BlowUp { t: opts.t1 });
    }
    let d = dynamics.d;
    let block = |o: usize| -> Vec<Vec<f64>> { state.iter().map(|s| s[o..o + d].iter().map(|v| v / np).collect()).collect() };
    Ok(TrajectoryRecord {
        times: opts.record_times(n),
        positions: block(0),
        velocities: dynamics.second_order.then(|| block(d)),
        averages: dynamics.averaging.is_some().then(|| block(dynamics.avg_offset())),
        f_values,
        f_stderr: Some(f_stderr),
        bound_values: None,
        seed: Some(ensemble.seed),
        n_paths: Some(ensemble.n_paths),
    })
}

#[allow(clippy::too_many_arguments)]
fn run_path(
    dynamics: &Dynamics,
    noise: &NoiseModel,
    gamma: f64,
    x0: &[f64],
    opts: &SimOptions,
    n: usize,
    seed: u64,
    path: u64,
    mut record: impl FnMut(usize, &[f64]),
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    let m = dynamics.len();
    let d = dynamics.d;
    let k = noise.rank();
    let mut y = dynamics.initial_state(x0);
    let mut dy = vec![0.0; m];
    let mut g = vec![0.0; d];
    let mut z = vec![0.0; k];
    let off = dynamics.noise_offset();
    let sqrt_dt = opts.dt.sqrt();
    let mut slot = 0;
    record(slot, &y);
    for step in 0..n {
        let t = opts.t0 + step as f64 * opts.dt;
        dynamics.drift(t, &y, &mut dy, &mut g);
        for zj in z.iter_mut() {
            *zj = StandardNormal.sample(&mut rng);
        }
        let scale = dynamics.step_at(t) * gamma.sqrt() * sqrt_dt;
        for i in 0..m {
            y[i] += dy[i] * opts.dt;
        }
        for (i, row) in noise.factor.iter().enumerate() {
            let w: f64 = row.iter().zip(&z).map(|(s, e)| s * e).sum();
            y[off + i] += scale * w;
        }
        if (step + 1) % opts.record_every == 0 {
            if y.iter().any(|v| !v.is_finite()) {
                return Err(SimError::BlowUp { t: t + opts.dt });
            }
            slot += 1;
            record(slot, &y);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    /// `bound - observed` at each recorded time.
    pub margins: Vec<f64>,
    pub min_margin: f64,
    pub argmin_t: f64,
    /// Deterministic runs: a margin below `-1e-6`. Ensembles: a margin
    /// below minus three standard errors.
    pub violated: bool,
}

/// Tolerance on deterministic margins.
pub const ODE_MARGIN_TOL: f64 = 1e-6;

pub fn check_bound(record: &TrajectoryRecord, bound: impl Fn(f64) -> f64) -> MarginReport {
    let margins: Vec<f64> = record.times.iter().zip(&record.f_values).map(|(&t, &f)| bound(t) - f).collect();
    let (mut min_margin, mut argmin_t) = (f64::INFINITY, f64::NAN);
    for (m, t) in margins.iter().zip(&record.times) {
        if *m < min_margin {
            min_margin = *m;
            argmin_t = *t;
        }
    }
    let violated = match &record.f_stderr {
        None => margins.iter().any(|m| *m < -ODE_MARGIN_TOL || m.is_nan()),
        Some(se) => margins.iter().zip(se).any(|(m, s)| *m < -3.0 * s || m.is_nan()),
    };
    MarginReport { margins, min_margin, argmin_t, violated }
}

/// `E[f - f*]` slope on log-log axes over `[lo, hi]`.
pub fn decay_slope(record: &TrajectoryRecord, lo: f64, hi: f64) -> f64 {
    let (ts, fs): (Vec<f64>, Vec<f64>) = record
        .times
        .iter()
        .zip(&record.f_values)
        .filter(|(t, f)| **t >= lo && **t <= hi && **f > 0.0)
        .map(|(t, f)| (*t, *f))
        .unzip();
    crate::numerics::log_log_slope(&ts, &fs)
}
