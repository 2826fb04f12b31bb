//! Subcommand arguments, resolved configurations and handlers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use flowcert::analysis::{
    check_certificate_with, detect_trivial_only, lyapunov_sweep, rate_sweep, Certificate, GridSpec, RateFamily,
    ReferenceCertificate, TrivialityFamily,
};
use flowcert::bounds::{evaluate, tabulate, write_table, BoundConstants, BoundFamily, SdeBoundSpec};
use flowcert::model::{Averaging, FlowSpec, FunctionClass, Profile, Smoothness};
use flowcert::numerics::log_grid;
use flowcert::simulate::{
    check_bound, integrate_ode, simulate_sde, Ensemble, NoiseModel, Objective, Quadratic, SimOptions, TrajectoryRecord,
};
use flowcert::solver::Tolerances;
use flowcert::worst_case::{extract_worst_case_with, write_samples};

use crate::config::{comment_block, resolve};

/// How a run ended, mapped to the exit status by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Marginal,
    Infeasible,
}

fn open_out(path: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn emit(path: &Option<PathBuf>, text: &str) -> anyhow::Result<()> {
    let mut out = open_out(path)?;
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn csv_text<R: Serialize>(header: String, rows: impl IntoIterator<Item = R>) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(header.into_bytes());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| anyhow!("{e}"))?)?)
}

fn json_with_config<C: Serialize, B: Serialize>(command: &str, config: &C, body: &B) -> anyhow::Result<String> {
    let mut v = serde_json::to_value(body)?;
    let obj = v.as_object_mut().ok_or_else(|| anyhow!("{command} output is not a JSON object"))?;
    obj.insert("config".into(), serde_json::json!({ "command": command, "resolved": config }));
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FlowId {
    GradientFlow,
    Oscillator,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct MuGridFlags {
    /// Smallest mu of the log-spaced grid.
    #[arg(long)]
    mu_lo: Option<f64>,
    #[arg(long)]
    mu_hi: Option<f64>,
    #[arg(long)]
    mu_points: Option<usize>,
}

fn mu_grid(lo: f64, hi: f64, n: usize) -> anyhow::Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && n >= 1) {
        bail!("mu grid needs 0 < mu_lo <= mu_hi and mu_points >= 1");
    }
    Ok(if n == 1 { vec![lo] } else { log_grid(lo, hi, n) })
}

// ---------------------------------------------------------------- rate

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct RateFlags {
    #[arg(long, value_enum)]
    flow: Option<FlowId>,
    /// Enforce P ⪰ 0 instead of the interpolated positivity condition.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    psd: Option<bool>,
    #[command(flatten)]
    #[serde(flatten)]
    grid: MuGridFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateConfig {
    pub flow: FlowId,
    pub psd: bool,
    pub mu_lo: f64,
    pub mu_hi: f64,
    pub mu_points: usize,
    pub out: Option<PathBuf>,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self { flow: FlowId::GradientFlow, psd: false, mu_lo: 1e-3, mu_hi: 1.0, mu_points: 20, out: None }
    }
}

#[derive(Serialize)]
struct RateCsvRow {
    condition: f64,
    pep: f64,
    theory: f64,
    relative_gap: f64,
}

pub fn rate(flags: &RateFlags, file: Option<&toml::Table>) -> anyhow::Result<Outcome> {
    let cfg: RateConfig = resolve(flags, file, "rate")?;
    let family = match (cfg.flow, cfg.psd) {
        (FlowId::GradientFlow, _) => RateFamily::GradientFlow,
        (FlowId::Oscillator, true) => RateFamily::OscillatorPsd,
        (FlowId::Oscillator, false) => RateFamily::OscillatorRelaxed,
    };
    let rows = rate_sweep(family, &mu_grid(cfg.mu_lo, cfg.mu_hi, cfg.mu_points)?)?;
    let text = csv_text(
        comment_block("rate", &cfg)?,
        rows.iter().map(|r| RateCsvRow {
            condition: r.mu,
            pep: r.tau_pep,
            theory: r.tau_reference,
            relative_gap: r.relative_gap,
        }),
    )?;
    emit(&cfg.out, &text)?;
    Ok(Outcome::Pass)
}

// ------------------------------------------------------------ lyapunov

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct LyapunovFlags {
    #[command(flatten)]
    #[serde(flatten)]
    grid: MuGridFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovConfig {
    pub mu_lo: f64,
    pub mu_hi: f64,
    pub mu_points: usize,
    pub out: Option<PathBuf>,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self { mu_lo: 1e-3, mu_hi: 1.0, mu_points: 20, out: None }
    }
}

#[derive(Serialize)]
struct LyapunovCsvRow {
    condition: f64,
    p11: f64,
    p12: f64,
    p22: f64,
    p11_reference: f64,
    p12_reference: f64,
}

pub fn lyapunov(flags: &LyapunovFlags, file: Option<&toml::Table>) -> anyhow::Result<Outcome> {
    let cfg: LyapunovConfig = resolve(flags, file, "lyapunov")?;
    let rows = lyapunov_sweep(&mu_grid(cfg.mu_lo, cfg.mu_hi, cfg.mu_points)?)?;
    let text = csv_text(
        comment_block("lyapunov", &cfg)?,
        rows.iter().map(|r| LyapunovCsvRow {
            condition: r.mu,
            p11: r.p11,
            p12: r.p12,
            p22: r.p22,
            p11_reference: 4.0 * r.mu / 9.0,
            p12_reference: 2.0 * r.mu.sqrt() / 3.0,
        }),
    )?;
    emit(&cfg.out, &text)?;
    Ok(Outcome::Pass)
}

// -------------------------------------------------------------- verify

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct VerifyFlags {
    /// Certificate JSON file.
    #[arg(long)]
    certificate: Option<PathBuf>,
    #[arg(long)]
    t_lo: Option<f64>,
    #[arg(long)]
    t_hi: Option<f64>,
    #[arg(long)]
    t_points: Option<usize>,
    #[arg(long)]
    feasibility_tol: Option<f64>,
    #[arg(long)]
    marginal_tol: Option<f64>,
    /// Residual report destination (JSON); stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub certificate: Option<PathBuf>,
    pub t_lo: Option<f64>,
    pub t_hi: Option<f64>,
    pub t_points: Option<usize>,
    pub feasibility_tol: f64,
    pub marginal_tol: f64,
    pub equality_tol: f64,
    pub report: Option<PathBuf>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let tol = Tolerances::default();
        Self {
            certificate: None,
            t_lo: None,
            t_hi: None,
            t_points: None,
            feasibility_tol: tol.feasibility,
            marginal_tol: tol.marginal,
            equality_tol: tol.equality,
            report: None,
        }
    }
}

impl VerifyConfig {
    fn grid(&self, cert: &Certificate) -> Option<GridSpec> {
        if self.t_lo.is_some() || self.t_hi.is_some() || self.t_points.is_some() {
            let d = GridSpec::default_time_grid();
            Some(GridSpec {
                lo: self.t_lo.unwrap_or(d.lo),
                hi: self.t_hi.unwrap_or(d.hi),
                points: self.t_points.unwrap_or(d.points),
            })
        } else if cert.is_time_dependent() {
            Some(GridSpec::default_time_grid())
        } else {
            None
        }
    }
}

pub fn verify(flags: &VerifyFlags, file: Option<&toml::Table>) -> anyhow::Result<Outcome> {
    let cfg: VerifyConfig = resolve(flags, file, "verify")?;
    let path = cfg.certificate.as_ref().ok_or_else(|| anyhow!("verify needs --certificate"))?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cert = Certificate::from_json(&text).with_context(|| format!("parsing certificate {}", path.display()))?;
    let tol = Tolerances {
        feasibility: cfg.feasibility_tol,
        marginal: cfg.marginal_tol,
        equality: cfg.equality_tol,
        ..Tolerances::default()
    };
    let grid = cfg.grid(&cert);
    let report = check_certificate_with(&cert, grid.as_ref(), &tol)?;
    let s = &report.summary;
    let outcome = if report.certified {
        Outcome::Pass
    } else if s.max_block_eigenvalue <= tol.marginal
        && s.max_equality_residual <= tol.equality
        && s.max_sign_violation <= tol.equality
    {
        Outcome::Marginal
    } else {
        Outcome::Infeasible
    };
    eprintln!(
        "{}: max block eigenvalue {:.3e}, max equality residual {:.3e}{}",
        match outcome {
            Outcome::Pass => "certified",
            Outcome::Marginal => "marginal",
            Outcome::Infeasible => "not certified",
        },
        s.max_block_eigenvalue,
        s.max_equality_residual,
        s.argmax_t.map(|t| format!(" (worst at t = {t:.6e})")).unwrap_or_default()
    );
    emit(&cfg.report, &json_with_config("verify", &cfg, &report)?)?;
    Ok(outcome)
}

// ----------------------------------------------------------- reference

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    GradientFlow,
    OscillatorSqrtMu,
    OscillatorFourThirds,
    AcceleratedFlow,
}

impl From<ReferenceKind> for ReferenceCertificate {
    fn from(k: ReferenceKind) -> Self {
        match k {
            ReferenceKind::GradientFlow => ReferenceCertificate::GradientFlow,
            ReferenceKind::OscillatorSqrtMu => ReferenceCertificate::OscillatorSqrtMu,
            ReferenceKind::OscillatorFourThirds => ReferenceCertificate::OscillatorFourThirds,
            ReferenceKind::AcceleratedFlow => ReferenceCertificate::AcceleratedFlow,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct ReferenceFlags {
    #[arg(long, value_enum)]
    kind: Option<ReferenceKind>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub kind: ReferenceKind,
    pub mu: f64,
    pub out: Option<PathBuf>,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self { kind: ReferenceKind::GradientFlow, mu: 0.1, out: None }
    }
}

pub fn reference(flags: &ReferenceFlags, file: Option<&toml::Table>) -> anyhow::Result<Outcome> {
    let cfg: ReferenceConfig = resolve(flags, file, "reference")?;
    let cert = ReferenceCertificate::from(cfg.kind).build(cfg.mu)?;
    emit(&cfg.out, &json_with_config("reference", &cfg, &cert)?)?;
    Ok(Outcome::Pass)
}

// ----------------------------------------------------------- worstcase

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct WorstcaseFlags {
    #[arg(long, value_enum)]
    flow: Option<FlowId>,
    #[arg(long)]
    mu: Option<f64>,
    /// Rate to extract at; the certified rate `2 mu` by default.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    /// Two-column sample file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Gram matrix, rank and triplets as JSON.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorstcaseConfig {
    pub flow: FlowId,
    pub mu: f64,
    pub tau: Option<f64>,
    pub points: usize,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
}

impl Default for WorstcaseConfig {
    fn default() -> Self {
        Self { flow: FlowId::GradientFlow, mu: 0.1, tau: None, points: 101, out: None, data: None }
    }
}

pub fn worstcase(flags: &WorstcaseFlags, file: Option<&toml::Table>) -> anyhow::Result<Outcome> {
    let cfg: WorstcaseConfig = resolve(flags, file, "worstcase")?;
    if cfg.flow != FlowId::GradientFlow {
        bail!("worst-case reconstruction is available for the gradient flow only");
    }
    let class = FunctionClass::new(cfg.mu, Smoothness::Infinite)?;
    let tau = cfg.tau.unwrap_or(2.0 * cfg.mu);
    let data = extract_worst_case_with(&FlowSpec::GradientFlow, &class, tau, cfg.points)?;
    let mut buf = comment_block("worstcase", &cfg)?.into_bytes();
    write_samples(&mut buf, &data.interpolant_samples)?;
    emit(&cfg.out, std::str::from_utf8(&buf)?)?;
    if cfg.data.is_some() {
        emit(&cfg.data, &json_with_config("worstcase", &cfg, &data)?)?;
    }
    Ok(Outcome::Pass)
}

// ------------------------------------------------------------ simulate

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DynamicsId {
    GradientFlow,
    Oscillator,
    /// First-order SDE model of SGD with `h_t = (t + 1)^{-alpha}`.
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AveragingId {
    None,
    PolyakRuppert,
    Primal,
    /// Weights `u_t = (t + 1)^{-beta}`.
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BoundId {
    None,
    /// Exponential envelope of the deterministic flow.
    Envelope,
    StepOnly,
    PrAveraged,
    WeightedAveraged,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct SimulateFlags {
    #[arg(long, value_enum)]
    dynamics: Option<DynamicsId>,
    /// Step-size exponent.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    averaging: Option<AveragingId>,
    /// Averaging exponent (weights, or `a_t = t^beta` in the averaged bound).
    #[arg(long)]
    beta: Option<f64>,
    /// Oscillator damping; `2 sqrt(curvature_lo)` by default.
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long)]
    curvature_lo: Option<f64>,
    #[arg(long)]
    curvature_hi: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    /// Every coordinate of the starting point.
    #[arg(long)]
    x0: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    trace_sigma: Option<f64>,
    /// Integrate the drift only.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    deterministic: Option<bool>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t0: Option<f64>,
    #[arg(long)]
    t1: Option<f64>,
    #[arg(long)]
    record_every: Option<usize>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    bound: Option<BoundId>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub dynamics: DynamicsId,
    pub alpha: f64,
    pub averaging: AveragingId,
    pub beta: f64,
    pub damping: Option<f64>,
    pub curvature_lo: f64,
    pub curvature_hi: f64,
    pub dim: usize,
    pub x0: f64,
    pub gamma: f64,
    pub trace_sigma: f64,
    pub deterministic: bool,
    pub dt: f64,
    pub t0: Option<f64>,
    pub t1: f64,
    pub record_every: usize,
    pub paths: usize,
    pub seed: u64,
    pub bound: BoundId,
    pub out: Option<PathBuf>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            dynamics: DynamicsId::Sgd,
            alpha: 0.5,
            averaging: AveragingId::None,
            beta: 0.5,
            damping: None,
            curvature_lo: 1e-4,
            curvature_hi: 1.0,
            dim: 17,
            x0: 1.0,
            gamma: 1.0,
            trace_sigma: 1.0,
            deterministic: false,
            dt: 1e-2,
            t0: None,
            t1: 100.0,
            record_every: 100,
            paths: 200,
            seed: 0,
            bound: BoundId::None,
            out: None,
        }
    }
}

impl SimulateConfig {
    fn curvatures(&self) -> anyhow::Result<Vec<f64>> {
        if self.dim == 0 || !(self.curvature_lo > 0.0 && self.curvature_hi >= self.curvature_lo) {
            bail!("need dim >= 1 and 0 < curvature_lo <= curvature_hi");
        }
        Ok(if self.dim == 1 { vec![self.curvature_lo] } else { log_grid(self.curvature_lo, self.curvature_hi, self.dim) })
    }

    fn flow(&self) -> anyhow::Result<FlowSpec> {
        Ok(match self.dynamics {
            DynamicsId::GradientFlow => FlowSpec::GradientFlow,
            DynamicsId::Oscillator => FlowSpec::damped_oscillator(self.damping_value())?,
            DynamicsId::Sgd => FlowSpec::FirstOrderSde {
                step: Profile::power_shift(1.0, -self.alpha, 1.0)?,
                gamma: self.gamma,
                trace_sigma: self.trace_sigma,
                smoothness: Smoothness::Finite(self.curvature_hi),
                averaging: match self.averaging {
                    AveragingId::None => Averaging::None,
                    AveragingId::PolyakRuppert => Averaging::PolyakRuppert,
                    AveragingId::Primal => Averaging::Primal,
                    AveragingId::Weighted => Averaging::Weighted { weight: Profile::power_shift(1.0, -self.beta, 1.0)? },
                },
            },
        })
    }

    fn damping_value(&self) -> f64 {
        self.damping.unwrap_or(2.0 * self.curvature_lo.sqrt())
    }

    fn start(&self) -> f64 {
        let averaged = self.dynamics == DynamicsId::Sgd && self.averaging != AveragingId::None;
        self.t0.unwrap_or(if averaged { self.dt } else { 0.0 })
    }

    fn sde_bound(&self, family: BoundFamily, f: &Quadratic, x0: &[f64]) -> anyhow::Result<SdeBoundSpec> {
        let constants = BoundConstants {
            gamma: self.gamma,
            trace_sigma: self.trace_sigma,
            smoothness: f.largest_curvature(),
            init_distance_sq: x0.iter().map(|v| v * v).sum(),
            init_gap: f.value(x0),
        };
        Ok(SdeBoundSpec::new(family, constants)?)
    }

    /// Upper envelope to compare the recorded `f - f*` with.
    fn bound_fn(&self, f: &Quadratic, x0: &[f64]) -> anyhow::Result<Option<Box<dyn Fn(f64) -> f64>>> {
        let mu = self.curvature_lo;
        let f0 = f.value(x0);
        let sde = |family| -> anyhow::Result<Option<Box<dyn Fn(f64) -> f64>>> {
            let spec = self.sde_bound(family, f, x0)?;
            Ok(Some(Box::new(move |t| evaluate(&spec, t).map(|b| b.total()).unwrap_or(f64::NAN))))
        };
        match (self.bound, self.dynamics) {
            (BoundId::None, _) => Ok(None),
            (BoundId::Envelope, DynamicsId::GradientFlow) => Ok(Some(Box::new(move |t| (-2.0 * mu * t).exp() * f0))),
            (BoundId::Envelope, DynamicsId::Oscillator) => {
                let s = mu.sqrt();
                if (self.damping_value() - 2.0 * s).abs() > 1e-12 * s {
                    bail!("the oscillator envelope needs damping 2 sqrt(curvature_lo)");
                }
                let v0 = f0 + 0.5 * mu * x0.iter().map(|v| v * v).sum::<f64>();
                Ok(Some(Box::new(move |t| (-s * t).exp() * v0)))
            }
            (BoundId::StepOnly, DynamicsId::Sgd) if self.averaging == AveragingId::None => {
                sde(BoundFamily::StepOnly { alpha: self.alpha })
            }
            (BoundId::PrAveraged, DynamicsId::Sgd) if self.averaging == AveragingId::PolyakRuppert => {
                sde(BoundFamily::PrAveraged { alpha: self.alpha, beta: self.beta })
            }
            (BoundId::WeightedAveraged, DynamicsId::Sgd) if self.averaging == AveragingId::Weighted => {
                sde(BoundFamily::WeightedAveraged { alpha: self.alpha, beta: self.beta })
            }
            (b, d) => bail!("bound {b:?} does not apply to {d:?} with averaging {:?}", self.averaging),
        }
    }
}

pub fn simulate(flags: &SimulateFlags, file: Option<&toml::Table>) -> anyhow::Result<Outcome> {
    let cfg: SimulateConfig = resolve(flags, file, "simulate")?;
    let f = Quadratic::new(cfg.curvatures()?)?;
    let x0 = vec![cfg.x0; cfg.dim];
    let flow = cfg.flow()?;
    let opts = SimOptions { t0: cfg.start(), t1: cfg.t1, dt: cfg.dt, record_every: cfg.record_every };
    let record: TrajectoryRecord = if cfg.dynamics == DynamicsId::Sgd && !cfg.deterministic {
        let noise = NoiseModel::rank_one(&vec![1.0; cfg.dim], cfg.trace_sigma)?;
        simulate_sde(&flow, &f, &noise, &x0, &opts, &Ensemble { n_paths: cfg.paths, seed: cfg.seed })?
    } else {
        integrate_ode(&flow, &f, &x0, &opts)?
    };
    let bound = cfg.bound_fn(&f, &x0)?;
    let (record, outcome) = match bound {
        Some(b) => {
            let record = record.with_bound(&b);
            let m = check_bound(&record, &b);
            eprintln!("min margin {:.3e} at t = {:.4e}", m.min_margin, m.argmin_t);
            (record, if m.violated { Outcome::Infeasible } else { Outcome::Pass })
        }
        None => (record, Outcome::Pass),
    };
    let mut buf = comment_block("simulate", &cfg)?.into_bytes();
    record.write_csv(&mut buf)?;
    emit(&cfg.out, std::str::from_utf8(&buf)?)?;
    Ok(outcome)
}

// -------------------------------------------------------------- bounds

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BoundFamilyId {
    StepOnly,
    PrAveraged,
    WeightedAveraged,
    AccDiminishing,
    AccCanonical,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct BoundsFlags {
    #[arg(long, value_enum)]
    family: Option<BoundFamilyId>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Damping numerator of the second-order family.
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    trace_sigma: Option<f64>,
    #[arg(long)]
    smoothness: Option<f64>,
    #[arg(long)]
    init_distance_sq: Option<f64>,
    #[arg(long)]
    init_gap: Option<f64>,
    #[arg(long)]
    t_lo: Option<f64>,
    #[arg(long)]
    t_hi: Option<f64>,
    #[arg(long)]
    t_points: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    pub family: BoundFamilyId,
    pub alpha: f64,
    pub beta: f64,
    pub b: f64,
    pub gamma: f64,
    pub trace_sigma: f64,
    pub smoothness: f64,
    pub init_distance_sq: f64,
    pub init_gap: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub t_points: usize,
    pub out: Option<PathBuf>,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        let c = BoundConstants::default();
        Self {
            family: BoundFamilyId::StepOnly,
            alpha: 0.5,
            beta: 0.5,
            b: 3.0,
            gamma: c.gamma,
            trace_sigma: c.trace_sigma,
            smoothness: c.smoothness,
            init_distance_sq: c.init_distance_sq,
            init_gap: c.init_gap,
            t_lo: 1.0,
            t_hi: 1e3,
            t_points: 61,
            out: None,
        }
    }
}

pub fn bounds(flags: &BoundsFlags, file: Option<&toml::Table>) -> anyhow::Result<Outcome> {
    let cfg: BoundsConfig = resolve(flags, file, "bounds")?;
    let family = match cfg.family {
        BoundFamilyId::StepOnly => BoundFamily::StepOnly { alpha: cfg.alpha },
        BoundFamilyId::PrAveraged => BoundFamily::PrAveraged { alpha: cfg.alpha, beta: cfg.beta },
        BoundFamilyId::WeightedAveraged => BoundFamily::WeightedAveraged { alpha: cfg.alpha, beta: cfg.beta },
        BoundFamilyId::AccDiminishing => BoundFamily::AccDiminishing { alpha: cfg.alpha, b: cfg.b, beta: cfg.beta },
        BoundFamilyId::AccCanonical => BoundFamily::AccCanonical,
    };
    let constants = BoundConstants {
        gamma: cfg.gamma,
        trace_sigma: cfg.trace_sigma,
        smoothness: cfg.smoothness,
        init_distance_sq: cfg.init_distance_sq,
        init_gap: cfg.init_gap,
    };
    let spec = SdeBoundSpec::new(family, constants)?;
    if !(cfg.t_lo > 0.0 && cfg.t_hi >= cfg.t_lo && cfg.t_points >= 1) {
        bail!("time grid needs 0 < t_lo <= t_hi and t_points >= 1");
    }
    let times = if cfg.t_points == 1 { vec![cfg.t_lo] } else { log_grid(cfg.t_lo, cfg.t_hi, cfg.t_points) };
    let rows = tabulate(&spec, &times)?;
    let mut buf = comment_block("bounds", &cfg)?.into_bytes();
    write_table(&mut buf, &rows)?;
    emit(&cfg.out, std::str::from_utf8(&buf)?)?;
    Ok(Outcome::Pass)
}

// ------------------------------------------------------- trivial-check

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TrivialFamilyId {
    /// Second-order SDE with averaging, `beta_t = 3/t`, unit step.
    AcceleratedSde,
    /// Third-order flow with coefficients `3/t`, `3/t²`, `1/t`.
    ThirdOrder,
    GradientFlow,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct TrivialFlags {
    #[arg(long, value_enum)]
    family: Option<TrivialFamilyId>,
    #[arg(long)]
    t_lo: Option<f64>,
    #[arg(long)]
    t_hi: Option<f64>,
    #[arg(long)]
    t_points: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrivialConfig {
    pub family: TrivialFamilyId,
    pub t_lo: f64,
    pub t_hi: f64,
    pub t_points: usize,
    pub out: Option<PathBuf>,
}

impl Default for TrivialConfig {
    fn default() -> Self {
        Self { family: TrivialFamilyId::AcceleratedSde, t_lo: 0.1, t_hi: 100.0, t_points: 25, out: None }
    }
}

pub fn trivial_check(flags: &TrivialFlags, file: Option<&toml::Table>) -> anyhow::Result<Outcome> {
    let cfg: TrivialConfig = resolve(flags, file, "trivial-check")?;
    let family = match cfg.family {
        TrivialFamilyId::AcceleratedSde => TrivialityFamily::accelerated_default(),
        TrivialFamilyId::ThirdOrder => TrivialityFamily::third_order_default(),
        TrivialFamilyId::GradientFlow => TrivialityFamily::GradientFlow,
    };
    if !(cfg.t_lo > 0.0 && cfg.t_hi >= cfg.t_lo && cfg.t_points >= 1) {
        bail!("time grid needs 0 < t_lo <= t_hi and t_points >= 1");
    }
    let grid = if cfg.t_points == 1 { vec![cfg.t_lo] } else { log_grid(cfg.t_lo, cfg.t_hi, cfg.t_points) };
    let report = detect_trivial_only(&family, &grid)?;
    eprintln!("trivial only: {}", report.trivial);
    emit(&cfg.out, &json_with_config("trivial-check", &cfg, &report)?)?;
    Ok(Outcome::Pass)
}

/// `true` when `err` (or its cause chain) is an I/O failure.
pub fn is_io_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| e.downcast_ref::<std::io::Error>().is_some() || e.downcast_ref::<csv::Error>().is_some_and(|c| c.is_io_error()))
}
