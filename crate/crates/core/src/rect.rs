//! Relaxed IMEX Euler and IMEX 2SBDF steppers on rectangular grids.
//!
//! Both schemes treat diffusion implicitly and the reaction explicitly, with
//! the stiff part of `F1` shifted into the implicit side by `w`. Every step
//! is two shifted Sylvester solves: first for φ, then for c using the new φ.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{reaction_f1, reaction_f2, CorrosionParameters};
use crate::spectral::{
    apply_kronecker_sum, factorization_count, solve_count, spectral_factorize, BcKind, ShiftedSolver,
    SpectralFactorization,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    Euler,
    #[serde(rename = "2sbdf", alias = "two_sbdf")]
    TwoSbdf,
}

impl Order {
    /// `γ = 1` for Euler, `3/2` for 2SBDF.
    pub fn gamma(self) -> f64 {
        match self {
            Order::Euler => 1.0,
            Order::TwoSbdf => 1.5,
        }
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Order::Euler => "euler",
            Order::TwoSbdf => "2sbdf",
        })
    }
}

/// How the second starting value of 2SBDF is produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "rule", content = "substeps")]
pub enum BootstrapRule {
    /// `ceil(4/Δt)` Euler substeps of equal size summing to Δt.
    #[default]
    QuarterSquare,
    /// A fixed number of equal Euler substeps.
    Substeps(usize),
}

impl BootstrapRule {
    /// `(count, substep)` with `count·substep = dt` up to rounding.
    pub fn substeps(self, dt: f64) -> (usize, f64) {
        let count = match self {
            BootstrapRule::QuarterSquare => {
                let q = 4.0 / dt;
                let r = q.round();
                if (q - r).abs() <= 1e-9 * q.max(1.0) {
                    r.max(1.0) as usize
                } else {
                    q.ceil().max(1.0) as usize
                }
            }
            BootstrapRule::Substeps(n) => n.max(1),
        };
        (count, dt / count as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub order: Order,
    pub dt: f64,
    pub w: f64,
    #[serde(default)]
    pub bootstrap: BootstrapRule,
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.w >= 0.0 && self.w.is_finite()) {
            return Err(Error::Config(format!("w must be non-negative, got {}", self.w)));
        }
        Ok(())
    }
}

/// Grid state `(Φ, C)` at time `t`, flat and x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPair {
    pub phi: Vec<f64>,
    pub c: Vec<f64>,
    pub t: f64,
    pub step_index: usize,
}

impl FieldPair {
    pub fn constant(n: usize, phi: f64, c: f64) -> Self {
        Self { phi: vec![phi; n], c: vec![c; n], t: 0.0, step_index: 0 }
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }
}

/// A Dirichlet boundary value, constant or time dependent.
#[derive(Clone)]
pub enum EdgeValue {
    Const(f64),
    Func(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl EdgeValue {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            EdgeValue::Const(v) => *v,
            EdgeValue::Func(f) => f(t),
        }
    }

    fn is_zero_const(&self) -> bool {
        matches!(self, EdgeValue::Const(v) if *v == 0.0)
    }
}

impl fmt::Debug for EdgeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeValue::Const(v) => write!(f, "Const({v})"),
            EdgeValue::Func(_) => f.write_str("Func(..)"),
        }
    }
}

/// Dirichlet values per axis as `(low, high)` for φ and c. Values on
/// Neumann ends are ignored.
#[derive(Debug, Clone)]
pub struct BoundaryData {
    pub phi: Vec<(EdgeValue, EdgeValue)>,
    pub c: Vec<(EdgeValue, EdgeValue)>,
}

impl BoundaryData {
    pub fn homogeneous(dim: usize) -> Self {
        let z = || (EdgeValue::Const(0.0), EdgeValue::Const(0.0));
        Self { phi: (0..dim).map(|_| z()).collect(), c: (0..dim).map(|_| z()).collect() }
    }

    /// Same constant on every Dirichlet end, for both fields.
    pub fn uniform(dim: usize, phi: f64, c: f64) -> Self {
        Self {
            phi: (0..dim).map(|_| (EdgeValue::Const(phi), EdgeValue::Const(phi))).collect(),
            c: (0..dim).map(|_| (EdgeValue::Const(c), EdgeValue::Const(c))).collect(),
        }
    }

    fn is_homogeneous(&self) -> bool {
        self.phi.iter().chain(&self.c).all(|(a, b)| a.is_zero_const() && b.is_zero_const())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Phi,
    C,
    F2,
}

/// Stencil contributions of known Dirichlet values, `Ψ`, as a flat vector.
/// For `Which::F2` the φ boundary values are passed through `F2`.
pub fn boundary_contribution(grid: &Grid, bdata: &BoundaryData, which: Which, t: f64, p: &CorrosionParameters) -> Vec<f64> {
    let n = grid.n_nodes();
    let mut psi = vec![0.0; n];
    let mut stride = 1;
    for (r, axis) in grid.axes.iter().enumerate() {
        let m = axis.count;
        let s = 1.0 / (axis.dr * axis.dr);
        let (lo, hi) = match which {
            Which::Phi | Which::F2 => &bdata.phi[r],
            Which::C => &bdata.c[r],
        };
        let map = |v: f64| if which == Which::F2 { reaction_f2(v, p) } else { v };
        for (end, kind, val) in [(0usize, axis.spec.low, lo), (m - 1, axis.spec.high, hi)] {
            if kind != BcKind::Dirichlet {
                continue;
            }
            let g = map(val.at(t));
            if g == 0.0 {
                continue;
            }
            // all nodes whose axis-r index equals `end`
            let outer = n / (stride * m);
            for o in 0..outer {
                for inner in 0..stride {
                    psi[o * stride * m + end * stride + inner] += g * s;
                }
            }
        }
        stride *= m;
    }
    psi
}

/// Per-axis spectral factorizations of a grid's Laplacians.
pub fn factorize_grid(grid: &Grid) -> Result<Vec<Arc<SpectralFactorization>>> {
    grid.laplacians.iter().map(|l| spectral_factorize(l).map(Arc::new)).collect()
}

/// Shifted solvers of one scheme at one step size.
#[derive(Debug, Clone)]
pub struct RectOperators {
    pub order: Order,
    pub dt: f64,
    pub w: f64,
    /// `(1+wΔt, −ΔtD_φ)` or `(3+2wΔt, −2ΔtD_φ)`.
    pub phi: ShiftedSolver,
    /// `(1, −ΔtD_c)` or `(3, −2ΔtD_c)`.
    pub c: ShiftedSolver,
}

impl RectOperators {
    pub fn new(facts: &[Arc<SpectralFactorization>], p: &CorrosionParameters, order: Order, dt: f64, w: f64) -> Result<Self> {
        let (phi, c) = match order {
            Order::Euler => (
                ShiftedSolver::new(1.0 + w * dt, -dt * p.d_phi, facts)?,
                ShiftedSolver::new(1.0, -dt * p.d_c, facts)?,
            ),
            Order::TwoSbdf => (
                ShiftedSolver::new(3.0 + 2.0 * w * dt, -2.0 * dt * p.d_phi, facts)?,
                ShiftedSolver::new(3.0, -2.0 * dt * p.d_c, facts)?,
            ),
        };
        Ok(Self { order, dt, w, phi, c })
    }
}

/// Everything a step needs besides the operators.
#[derive(Debug, Clone)]
pub struct RectContext {
    pub grid: Grid,
    pub params: CorrosionParameters,
    pub bdata: BoundaryData,
}

impl RectContext {
    pub fn new(grid: Grid, params: CorrosionParameters, bdata: BoundaryData) -> Result<Self> {
        if bdata.phi.len() != grid.dim() || bdata.c.len() != grid.dim() {
            return Err(Error::Config("boundary data must list one (low, high) pair per axis".into()));
        }
        params.validate()?;
        Ok(Self { grid, params, bdata })
    }

    pub(crate) fn psi(&self, which: Which, t: f64) -> Option<Vec<f64>> {
        if self.bdata.is_homogeneous() {
            return None;
        }
        Some(boundary_contribution(&self.grid, &self.bdata, which, t, &self.params))
    }

    pub(crate) fn laplacian(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        apply_kronecker_sum(&self.grid.laplacians, u, &mut out);
        out
    }
}

pub(crate) fn f1_field(phi: &[f64], c: &[f64], p: &CorrosionParameters, chi: Option<&[f64]>) -> Vec<f64> {
    match chi {
        None => phi.iter().zip(c).map(|(&f, &c)| reaction_f1(f, c, p)).collect(),
        Some(chi) => phi.iter().zip(c).zip(chi).map(|((&f, &c), &x)| x * reaction_f1(f, c, p)).collect(),
    }
}

pub(crate) fn f2_field(phi: &[f64], p: &CorrosionParameters) -> Vec<f64> {
    phi.iter().map(|&f| reaction_f2(f, p)).collect()
}

/// Right-hand side of the Euler φ-equation,
/// `Φⁿ + Δt(D_φ(Ψ_φ − corr) + wΦⁿ + F1)`.
pub(crate) fn euler_phi_rhs(phi_n: &[f64], f1: &[f64], psi: Option<&[f64]>, corr: Option<&[f64]>, dt: f64, w: f64, d: f64) -> Vec<f64> {
    (0..phi_n.len())
        .map(|i| {
            let mut bnd = psi.map_or(0.0, |v| v[i]);
            if let Some(cr) = corr {
                bnd -= cr[i];
            }
            phi_n[i] + dt * (d * bnd + w * phi_n[i] + f1[i])
        })
        .collect()
}

/// Right-hand side of the Euler c-equation, `Cⁿ + ΔtD_c(L + Ψ_c + Ψ_F2 − corr)`
/// where `L` is the (corrected) Laplacian of `F2(Φⁿ⁺¹)`.
pub(crate) fn euler_c_rhs(c_n: &[f64], lap_f2: &[f64], psi: Option<(&[f64], &[f64])>, corr: Option<&[f64]>, dt: f64, d: f64) -> Vec<f64> {
    (0..c_n.len())
        .map(|i| {
            let mut br = lap_f2[i];
            if let Some((pc, pf)) = psi {
                br += pc[i] + pf[i];
            }
            if let Some(cr) = corr {
                br -= cr[i];
            }
            c_n[i] + dt * d * br
        })
        .collect()
}

/// Right-hand side of the 2SBDF φ-equation,
/// `4Φ¹ − Φ⁰ + 2Δt(2F1¹ + 2wΦ¹ − F1⁰ − wΦ⁰) + 2ΔtD_φ(Ψ_φ − corr)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sbdf_phi_rhs(
    phi0: &[f64],
    phi1: &[f64],
    f1_0: &[f64],
    f1_1: &[f64],
    psi: Option<&[f64]>,
    corr: Option<&[f64]>,
    dt: f64,
    w: f64,
    d: f64,
) -> Vec<f64> {
    (0..phi0.len())
        .map(|i| {
            let mut bnd = psi.map_or(0.0, |v| v[i]);
            if let Some(cr) = corr {
                bnd -= cr[i];
            }
            4.0 * phi1[i] - phi0[i]
                + 2.0 * dt * (2.0 * f1_1[i] + 2.0 * w * phi1[i] - f1_0[i] - w * phi0[i])
                + 2.0 * dt * d * bnd
        })
        .collect()
}

/// Right-hand side of the 2SBDF c-equation,
/// `4C¹ − C⁰ + 2ΔtD_c(L + Ψ_c + Ψ_F2 − corr)`.
pub(crate) fn sbdf_c_rhs(c0: &[f64], c1: &[f64], lap_f2: &[f64], psi: Option<(&[f64], &[f64])>, corr: Option<&[f64]>, dt: f64, d: f64) -> Vec<f64> {
    (0..c0.len())
        .map(|i| {
            let mut br = lap_f2[i];
            if let Some((pc, pf)) = psi {
                br += pc[i] + pf[i];
            }
            if let Some(cr) = corr {
                br -= cr[i];
            }
            4.0 * c1[i] - c0[i] + 2.0 * dt * d * br
        })
        .collect()
}

/// Largest magnitude accepted before a state is declared unstable.
pub const BLOWUP_LIMIT: f64 = 1e6;

pub(crate) fn check_finite(u: &[f64], step: usize, t: f64, name: &str) -> Result<()> {
    if let Some(v) = u.iter().find(|v| !v.is_finite() || v.abs() > BLOWUP_LIMIT) {
        return Err(Error::Instability { step, t, what: format!("{name} reached {v}") });
    }
    Ok(())
}

/// One relaxed IMEX Euler step.
pub fn step_imex_euler_rect(ctx: &RectContext, ops: &RectOperators, state: &FieldPair) -> Result<FieldPair> {
    if ops.order != Order::Euler {
        return Err(Error::Config("Euler step needs Euler operators".into()));
    }
    let p = &ctx.params;
    let (dt, w) = (ops.dt, ops.w);
    let t1 = state.t + dt;
    let f1 = f1_field(&state.phi, &state.c, p, None);
    let psi_phi = ctx.psi(Which::Phi, t1);
    let rhs = euler_phi_rhs(&state.phi, &f1, psi_phi.as_deref(), None, dt, w, p.d_phi);
    let phi = ops.phi.solve(&rhs)?;
    check_finite(&phi, state.step_index + 1, t1, "phi")?;

    let lap = ctx.laplacian(&f2_field(&phi, p));
    let psi = ctx.psi(Which::C, t1).zip(ctx.psi(Which::F2, t1));
    let rhs = euler_c_rhs(&state.c, &lap, psi.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice())), None, dt, p.d_c);
    let c = ops.c.solve(&rhs)?;
    check_finite(&c, state.step_index + 1, t1, "c")?;
    Ok(FieldPair { phi, c, t: t1, step_index: state.step_index + 1 })
}

/// One relaxed IMEX 2SBDF step from `(prev, curr)` to the next level.
pub fn step_imex_2sbdf_rect(ctx: &RectContext, ops: &RectOperators, prev: &FieldPair, curr: &FieldPair) -> Result<FieldPair> {
    if ops.order != Order::TwoSbdf {
        return Err(Error::Config("2SBDF step needs 2SBDF operators".into()));
    }
    let dt = ops.dt;
    if ((curr.t - prev.t) - dt).abs() > 1e-9 * dt.max(curr.t.abs()) {
        return Err(Error::Config(format!(
            "2SBDF history spacing {} differs from dt {dt}",
            curr.t - prev.t
        )));
    }
    let p = &ctx.params;
    let t2 = curr.t + dt;
    let f1_0 = f1_field(&prev.phi, &prev.c, p, None);
    let f1_1 = f1_field(&curr.phi, &curr.c, p, None);
    let psi_phi = ctx.psi(Which::Phi, t2);
    let rhs = sbdf_phi_rhs(&prev.phi, &curr.phi, &f1_0, &f1_1, psi_phi.as_deref(), None, dt, ops.w, p.d_phi);
    let phi = ops.phi.solve(&rhs)?;
    check_finite(&phi, curr.step_index + 1, t2, "phi")?;

    let lap = ctx.laplacian(&f2_field(&phi, p));
    let psi = ctx.psi(Which::C, t2).zip(ctx.psi(Which::F2, t2));
    let rhs = sbdf_c_rhs(&prev.c, &curr.c, &lap, psi.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice())), None, dt, p.d_c);
    let c = ops.c.solve(&rhs)?;
    check_finite(&c, curr.step_index + 1, t2, "c")?;
    Ok(FieldPair { phi, c, t: t2, step_index: curr.step_index + 1 })
}

/// Produces the second starting value of 2SBDF by Euler substeps.
/// Returns `(state0, state at t0 + Δt)`; the latter has step index 1.
pub fn bootstrap_2sbdf(
    ctx: &RectContext,
    facts: &[Arc<SpectralFactorization>],
    cfg: &SchemeConfig,
    state0: &FieldPair,
) -> Result<(FieldPair, FieldPair)> {
    let (count, h) = cfg.bootstrap.substeps(cfg.dt);
    let ops = RectOperators::new(facts, &ctx.params, Order::Euler, h, cfg.w)?;
    let mut s = state0.clone();
    for _ in 0..count {
        s = step_imex_euler_rect(ctx, &ops, &s)?;
    }
    s.t = state0.t + cfg.dt;
    s.step_index = state0.step_index + 1;
    Ok((state0.clone(), s))
}

/// Step count `N` with `T = N·Δt`.
pub fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(horizon >= 0.0) {
        return Err(Error::Config(format!("horizon must be non-negative, got {horizon}")));
    }
    let q = horizon / dt;
    let n = q.round();
    if (q - n).abs() > 1e-9 * q.max(1.0) {
        return Err(Error::Config(format!("horizon {horizon} is not a multiple of dt {dt}")));
    }
    Ok(n as usize)
}

/// Step indices at which snapshots are taken (nearest completed step).
pub fn snapshot_steps(times: &[f64], dt: f64, n_steps: usize) -> Vec<usize> {
    times.iter().map(|&t| ((t / dt).round().max(0.0) as usize).min(n_steps)).collect()
}

/// Timing and instrumentation of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub steps: usize,
    pub factorizations: usize,
    /// Factorizations triggered inside the step loop (expected 0).
    pub loop_factorizations: usize,
    pub solves: usize,
    pub wall_s: f64,
    pub mean_step_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// `(requested time, state)` pairs.
    pub snapshots: Vec<(f64, FieldPair)>,
    pub final_state: FieldPair,
    pub stats: RunStats,
}

/// Runs a rectangular simulation to `horizon`. `observe` sees every state,
/// starting with the initial one.
pub fn run_rect(
    ctx: &RectContext,
    state0: FieldPair,
    cfg: &SchemeConfig,
    horizon: f64,
    snapshot_times: &[f64],
    observe: &mut dyn FnMut(&FieldPair),
) -> Result<RunOutput> {
    cfg.validate()?;
    let n_steps = step_count(horizon, cfg.dt)?;
    if state0.phi.len() != ctx.grid.n_nodes() || state0.c.len() != ctx.grid.n_nodes() {
        return Err(Error::Dimension("initial state does not match grid".into()));
    }
    let start = Instant::now();
    let f0 = factorization_count();
    let s0 = solve_count();
    let facts = factorize_grid(&ctx.grid)?;
    let ops = RectOperators::new(&facts, &ctx.params, cfg.order, cfg.dt, cfg.w)?;
    let f_setup = factorization_count();

    let snap_at = snapshot_steps(snapshot_times, cfg.dt, n_steps);
    let mut snapshots = Vec::new();
    let t0 = state0.t;
    let take = |s: &FieldPair, snaps: &mut Vec<(f64, FieldPair)>| {
        for (k, &n) in snap_at.iter().enumerate() {
            if n == s.step_index {
                snaps.push((snapshot_times[k], s.clone()));
            }
        }
    };
    observe(&state0);
    take(&state0, &mut snapshots);
    let loop_start = Instant::now();
    let mut prev: Option<FieldPair> = None;
    let mut curr = state0;
    for n in 1..=n_steps {
        let mut next = match cfg.order {
            Order::Euler => step_imex_euler_rect(ctx, &ops, &curr)?,
            Order::TwoSbdf => match &prev {
                None => bootstrap_2sbdf(ctx, &facts, cfg, &curr)?.1,
                Some(pr) => step_imex_2sbdf_rect(ctx, &ops, pr, &curr)?,
            },
        };
        next.t = t0 + n as f64 * cfg.dt;
        observe(&next);
        take(&next, &mut snapshots);
        prev = Some(std::mem::replace(&mut curr, next));
    }
    let loop_s = loop_start.elapsed().as_secs_f64();
    let stats = RunStats {
        steps: n_steps,
        factorizations: factorization_count() - f0,
        loop_factorizations: factorization_count() - f_setup,
        solves: solve_count() - s0,
        wall_s: start.elapsed().as_secs_f64(),
        mean_step_ms: if n_steps > 0 { 1e3 * loop_s / n_steps as f64 } else { 0.0 },
    };
    Ok(RunOutput { snapshots, final_state: curr, stats })
}
