//! Iterative IMEX-I and IMEX-E steppers for grids with holes.
//!
//! The hole set Θ is kept inside the rectangular grid with zero fields. The
//! corrected Laplacian `Δ̂ = M − N1 − N2` decouples Θ from the physical
//! nodes, and the implicit system `(βI − αΔ̂)u = r` is solved by the fixed
//! point iteration `(βI − αM)u^{k+1} = r − α(N u^k + G u^n)`. IMEX-I takes
//! `N = N1 + N2, G = 0`; IMEX-E takes `N = N1, G = N2`.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, NonConvergence, Result};
use crate::grid::{build_correction_matrices, CorrectionOperators, DomainMask, SparseMatrix};
use crate::rect::{
    check_finite, euler_c_rhs, euler_phi_rhs, f1_field, f2_field, factorize_grid, sbdf_c_rhs, sbdf_phi_rhs,
    snapshot_steps, step_count, BootstrapRule, FieldPair, Order, RectContext, RectOperators, RunOutput, RunStats,
    Which,
};
use crate::spectral::{factorization_count, solve_count, ShiftedSolver, SpectralFactorization};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[serde(alias = "imex_i", alias = "I")]
    ImexI,
    #[serde(alias = "imex_e", alias = "E")]
    ImexE,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::ImexI => "imex_i",
            Variant::ImexE => "imex_e",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StopMode {
    #[default]
    FullCriteria,
    ReducedSingleIteration,
}

fn default_eps1() -> f64 {
    1e-4
}
fn default_eps2() -> f64 {
    1e-3
}
fn default_eps3() -> f64 {
    1e-8
}
fn default_max_iters() -> usize {
    500
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterSchemeConfig {
    pub variant: Variant,
    pub order: Order,
    pub dt: f64,
    pub w: f64,
    #[serde(default = "default_eps1")]
    pub eps1: f64,
    #[serde(default = "default_eps2")]
    pub eps2: f64,
    #[serde(default = "default_eps3")]
    pub eps3: f64,
    #[serde(default)]
    pub stop_mode: StopMode,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub bootstrap: BootstrapRule,
}

impl IterSchemeConfig {
    pub fn new(variant: Variant, order: Order, dt: f64, w: f64) -> Self {
        Self {
            variant,
            order,
            dt,
            w,
            eps1: default_eps1(),
            eps2: default_eps2(),
            eps3: default_eps3(),
            stop_mode: StopMode::FullCriteria,
            max_iters: default_max_iters(),
            bootstrap: BootstrapRule::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) || !(self.w >= 0.0 && self.w.is_finite()) {
            return Err(Error::Config("dt must be positive and w non-negative".into()));
        }
        if !(self.eps1 > 0.0 && self.eps2 > 0.0 && self.eps3 > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-step iteration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct IterationReport {
    pub step: usize,
    pub t: f64,
    pub k_phi: usize,
    pub k_c: usize,
    /// Last max-norm change on Ω̂ of the φ iterates.
    pub res_phi: f64,
    pub res_c: f64,
    pub max_phi_theta: f64,
    pub max_c_theta: f64,
    pub wall_ms: f64,
}

/// Mask-derived operators of one variant.
#[derive(Debug, Clone)]
pub struct HoleOperators {
    pub mask: DomainMask,
    pub corr: CorrectionOperators,
    /// `N1 + N2`, the correction inside `Δ̂`.
    pub hat: SparseMatrix,
    pub n: SparseMatrix,
    /// `Some(N2)` for IMEX-E.
    pub g: Option<SparseMatrix>,
}

impl HoleOperators {
    pub fn new(ctx: &RectContext, mask: DomainMask, variant: Variant) -> Result<Self> {
        let corr = build_correction_matrices(&ctx.grid, &mask)?;
        let hat = corr.sum();
        let (n, g) = match variant {
            Variant::ImexI => (hat.clone(), None),
            Variant::ImexE => (corr.n1.clone(), Some(corr.n2.clone())),
        };
        Ok(Self { mask, corr, hat, n, g })
    }
}

/// Outcome of the stopping test for one pair of successive iterates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopDecision {
    pub stop: bool,
    pub delta_omega: f64,
    pub max_theta: f64,
    pub delta_theta: f64,
}

/// Evaluates `max_Ω̂|Δu| < ε1 ∧ (max_Θ|u| < ε2·n/N ∨ max_Θ|Δu| < ε3)` for
/// iterates `old → new`, with `fraction = n/N`.
pub fn check_stop_criteria(old: &[f64], new: &[f64], mask: &DomainMask, eps: (f64, f64, f64), fraction: f64) -> StopDecision {
    let mut delta_omega: f64 = 0.0;
    let mut max_theta: f64 = 0.0;
    let mut delta_theta: f64 = 0.0;
    for i in 0..new.len() {
        let d = (new[i] - old[i]).abs();
        if mask.theta[i] {
            max_theta = max_theta.max(new[i].abs());
            delta_theta = delta_theta.max(d);
        } else {
            delta_omega = delta_omega.max(d);
        }
    }
    let (e1, e2, e3) = eps;
    let stop = delta_omega < e1 && (max_theta < fraction * e2 || delta_theta < e3 || mask.is_empty());
    StopDecision { stop, delta_omega, max_theta, delta_theta }
}

/// `(max|φ|, max|c|)` over Θ.
pub fn theta_error(state: &FieldPair, mask: &DomainMask) -> Result<(f64, f64)> {
    if mask.is_empty() {
        return Err(Error::Analysis("theta error needs a non-empty hole set".into()));
    }
    let mut a: f64 = 0.0;
    let mut b: f64 = 0.0;
    for &p in &mask.theta_nodes {
        a = a.max(state.phi[p].abs());
        b = b.max(state.c[p].abs());
    }
    Ok((a, b))
}

/// Responses `(βI − αM)⁻¹e_p` for every row `p` of `N`, letting an
/// iteration update cost one sparse combination instead of a full solve.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    pub rows: Vec<usize>,
    pub columns: Vec<Vec<f64>>,
}

/// Upper bound on cached response storage (number of f64 values).
pub const RESPONSE_CACHE_LIMIT: usize = 1 << 25;

impl ResponseCache {
    pub fn build(solver: &ShiftedSolver, n: &SparseMatrix) -> Result<Option<Self>> {
        let r = n.rows.len();
        let total = n.n;
        if r == 0 || r.saturating_mul(total) > RESPONSE_CACHE_LIMIT {
            return Ok(None);
        }
        let mut columns = Vec::with_capacity(r);
        let mut e = vec![0.0; total];
        for &p in &n.rows {
            e[p] = 1.0;
            columns.push(solver.solve(&e)?);
            e[p] = 0.0;
        }
        Ok(Some(Self { rows: n.rows.clone(), columns }))
    }

    /// `base + scale·Σ_k (N u)_{rows[k]} · columns[k]`.
    fn combine(&self, base: &[f64], n: &SparseMatrix, u: &[f64], scale: f64) -> Vec<f64> {
        let mut out = base.to_vec();
        for (k, col) in self.columns.iter().enumerate() {
            let mut acc = 0.0;
            for (c, v) in n.row_entries(k) {
                acc += v * u[c];
            }
            let coef = scale * acc;
            if coef != 0.0 {
                for (o, x) in out.iter_mut().zip(col) {
                    *o += coef * x;
                }
            }
        }
        out
    }
}

/// Shifted solvers plus optional response caches for one step size.
#[derive(Debug, Clone)]
pub struct IterOperators {
    pub rect: RectOperators,
    pub phi_cache: Option<ResponseCache>,
    pub c_cache: Option<ResponseCache>,
}

impl IterOperators {
    pub fn new(
        ctx: &RectContext,
        facts: &[std::sync::Arc<SpectralFactorization>],
        holes: &HoleOperators,
        order: Order,
        dt: f64,
        w: f64,
        use_cache: bool,
    ) -> Result<Self> {
        let rect = RectOperators::new(facts, &ctx.params, order, dt, w)?;
        let (phi_cache, c_cache) = if use_cache {
            (
                ResponseCache::build(&rect.phi, &holes.n)?,
                ResponseCache::build(&rect.c, &holes.n)?,
            )
        } else {
            (None, None)
        };
        Ok(Self { rect, phi_cache, c_cache })
    }
}

/// Which linear equation an iteration loop is working on.
#[derive(Clone, Copy)]
enum Eq_ {
    Phi,
    C,
}

struct LoopSpec<'a> {
    eq: Eq_,
    solver: &'a ShiftedSolver,
    cache: Option<&'a ResponseCache>,
    /// Coefficient of `corr` in the right-hand side (`−αΔt`-type factor).
    corr_scale: f64,
    /// Right-hand side as a function of the correction vector.
    rhs: &'a dyn Fn(Option<&[f64]>) -> Vec<f64>,
    /// `G·(time-level values)`, part of every correction.
    g_part: Option<Vec<f64>>,
    warm: &'a [f64],
    single: bool,
    all_nodes: bool,
}

struct LoopResult {
    u: Vec<f64>,
    k: usize,
    residual: f64,
}

fn iterate(
    holes: &HoleOperators,
    cfg: &IterSchemeConfig,
    spec: LoopSpec<'_>,
    fraction: f64,
    step: usize,
    t: f64,
) -> Result<LoopResult> {
    let n = &holes.n;
    let name = match spec.eq {
        Eq_::Phi => "phi",
        Eq_::C => "c",
    };
    let corr_of = |u: &[f64]| -> Option<Vec<f64>> {
        if n.rows.is_empty() && spec.g_part.is_none() {
            return None;
        }
        let mut corr = spec.g_part.clone().unwrap_or_else(|| vec![0.0; u.len()]);
        n.mul_add(1.0, u, &mut corr);
        Some(corr)
    };
    // with a cache the solve of the G-part right-hand side is shared by all iterations
    let base = match spec.cache {
        Some(_) => Some(spec.solver.solve(&(spec.rhs)(spec.g_part.as_deref()))?),
        None => None,
    };
    let mut u = spec.warm.to_vec();
    let mut k = 0;
    loop {
        let next = match (spec.cache, &base) {
            (Some(cache), Some(b)) => cache.combine(b, n, &u, spec.corr_scale),
            _ => {
                let corr = corr_of(&u);
                spec.solver.solve(&(spec.rhs)(corr.as_deref()))?
            }
        };
        k += 1;
        check_finite(&next, step, t, name)?;
        // without N the first solve is already the fixed point
        let (stop, residual) = if spec.single || n.rows.is_empty() {
            (true, max_abs_diff(&u, &next))
        } else if spec.all_nodes {
            let r = max_abs_diff(&u, &next);
            (r < cfg.eps1, r)
        } else {
            let d = check_stop_criteria(&u, &next, &holes.mask, (cfg.eps1, cfg.eps2, cfg.eps3), fraction);
            (d.stop, d.delta_omega)
        };
        u = next;
        if stop {
            return Ok(LoopResult { u, k, residual });
        }
        if k >= cfg.max_iters {
            return Err(Error::NonConvergence(NonConvergence { step, t, equation: name, iterations: k, last_residual: residual }));
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `(M − N1 − N2)F2(φ)`.
fn corrected_laplacian_f2(ctx: &RectContext, holes: &HoleOperators, phi: &[f64]) -> Vec<f64> {
    let f2 = f2_field(phi, &ctx.params);
    let mut lap = ctx.laplacian(&f2);
    holes.hat.mul_add(-1.0, &f2, &mut lap);
    lap
}

fn psi_pair(ctx: &RectContext, t: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    ctx.psi(Which::C, t).zip(ctx.psi(Which::F2, t))
}

fn as_refs(p: &Option<(Vec<f64>, Vec<f64>)>) -> Option<(&[f64], &[f64])> {
    p.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()))
}

fn finish_report(state: &FieldPair, holes: &HoleOperators, phi: &LoopResult, c: &LoopResult, start: Instant) -> IterationReport {
    let (mp, mc) = if holes.mask.is_empty() { (0.0, 0.0) } else { theta_error(state, &holes.mask).unwrap_or((0.0, 0.0)) };
    IterationReport {
        step: state.step_index,
        t: state.t,
        k_phi: phi.k,
        k_c: c.k,
        res_phi: phi.residual,
        res_c: c.residual,
        max_phi_theta: mp,
        max_c_theta: mc,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

/// One iterative IMEX-I/E Euler step. `fraction` is `n/N` for the new level.
pub fn step_iter_euler(
    ctx: &RectContext,
    holes: &HoleOperators,
    ops: &IterOperators,
    cfg: &IterSchemeConfig,
    state: &FieldPair,
    fraction: f64,
) -> Result<(FieldPair, IterationReport)> {
    let start = Instant::now();
    let p = &ctx.params;
    let (dt, w) = (ops.rect.dt, ops.rect.w);
    let t1 = state.t + dt;
    let step = state.step_index + 1;
    let reduced = cfg.stop_mode == StopMode::ReducedSingleIteration;

    // F1 is left unmasked: F1(0, c) = 0, and off zero the relaxation term
    // damps any φ drift the stop rule lets into Θ.
    let f1 = f1_field(&state.phi, &state.c, p, None);
    let psi_phi = ctx.psi(Which::Phi, t1);
    let rhs_phi = |corr: Option<&[f64]>| euler_phi_rhs(&state.phi, &f1, psi_phi.as_deref(), corr, dt, w, p.d_phi);
    let phi = iterate(
        holes,
        cfg,
        LoopSpec {
            eq: Eq_::Phi,
            solver: &ops.rect.phi,
            cache: ops.phi_cache.as_ref(),
            corr_scale: -dt * p.d_phi,
            rhs: &rhs_phi,
            g_part: holes.g.as_ref().map(|g| g.apply(&state.phi)),
            warm: &state.phi,
            single: reduced,
            all_nodes: false,
        },
        fraction,
        step,
        t1,
    )?;

    let lap = corrected_laplacian_f2(ctx, holes, &phi.u);
    let psi = psi_pair(ctx, t1);
    let rhs_c = |corr: Option<&[f64]>| euler_c_rhs(&state.c, &lap, as_refs(&psi), corr, dt, p.d_c);
    let c = iterate(
        holes,
        cfg,
        LoopSpec {
            eq: Eq_::C,
            solver: &ops.rect.c,
            cache: ops.c_cache.as_ref(),
            corr_scale: -dt * p.d_c,
            rhs: &rhs_c,
            g_part: holes.g.as_ref().map(|g| g.apply(&state.c)),
            warm: &state.c,
            single: false,
            all_nodes: reduced,
        },
        fraction,
        step,
        t1,
    )?;
    let next = FieldPair { phi: phi.u.clone(), c: c.u.clone(), t: t1, step_index: step };
    let report = finish_report(&next, holes, &phi, &c, start);
    Ok((next, report))
}

/// One iterative IMEX-I/E 2SBDF step from `(prev, curr)`.
pub fn step_iter_2sbdf(
    ctx: &RectContext,
    holes: &HoleOperators,
    ops: &IterOperators,
    cfg: &IterSchemeConfig,
    prev: &FieldPair,
    curr: &FieldPair,
    fraction: f64,
) -> Result<(FieldPair, IterationReport)> {
    let start = Instant::now();
    let p = &ctx.params;
    let (dt, w) = (ops.rect.dt, ops.rect.w);
    let t2 = curr.t + dt;
    let step = curr.step_index + 1;
    let reduced = cfg.stop_mode == StopMode::ReducedSingleIteration;

    let f1_0 = f1_field(&prev.phi, &prev.c, p, None);
    let f1_1 = f1_field(&curr.phi, &curr.c, p, None);
    let psi_phi = ctx.psi(Which::Phi, t2);
    let rhs_phi =
        |corr: Option<&[f64]>| sbdf_phi_rhs(&prev.phi, &curr.phi, &f1_0, &f1_1, psi_phi.as_deref(), corr, dt, w, p.d_phi);
    let extrap = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x0, x1)| 2.0 * x1 - x0).collect() };
    let phi = iterate(
        holes,
        cfg,
        LoopSpec {
            eq: Eq_::Phi,
            solver: &ops.rect.phi,
            cache: ops.phi_cache.as_ref(),
            corr_scale: -2.0 * dt * p.d_phi,
            rhs: &rhs_phi,
            g_part: holes.g.as_ref().map(|g| g.apply(&extrap(&prev.phi, &curr.phi))),
            warm: &curr.phi,
            single: reduced,
            all_nodes: false,
        },
        fraction,
        step,
        t2,
    )?;

    let lap = corrected_laplacian_f2(ctx, holes, &phi.u);
    let psi = psi_pair(ctx, t2);
    let rhs_c = |corr: Option<&[f64]>| sbdf_c_rhs(&prev.c, &curr.c, &lap, as_refs(&psi), corr, dt, p.d_c);
    let c = iterate(
        holes,
        cfg,
        LoopSpec {
            eq: Eq_::C,
            solver: &ops.rect.c,
            cache: ops.c_cache.as_ref(),
            corr_scale: -2.0 * dt * p.d_c,
            rhs: &rhs_c,
            g_part: holes.g.as_ref().map(|g| g.apply(&extrap(&prev.c, &curr.c))),
            warm: &curr.c,
            single: false,
            all_nodes: reduced,
        },
        fraction,
        step,
        t2,
    )?;
    let next = FieldPair { phi: phi.u.clone(), c: c.u.clone(), t: t2, step_index: step };
    let report = finish_report(&next, holes, &phi, &c, start);
    Ok((next, report))
}

/// Reduced-mode step: one φ iteration, c iterated to `max_Ω|Δc| < ε1`.
pub fn step_reduced_mode(
    ctx: &RectContext,
    holes: &HoleOperators,
    ops: &IterOperators,
    cfg: &IterSchemeConfig,
    history: (&FieldPair, Option<&FieldPair>),
    fraction: f64,
) -> Result<(FieldPair, IterationReport)> {
    let mut c = *cfg;
    c.stop_mode = StopMode::ReducedSingleIteration;
    match history {
        (curr, None) => step_iter_euler(ctx, holes, ops, &c, curr, fraction),
        (curr, Some(prev)) => step_iter_2sbdf(ctx, holes, ops, &c, prev, curr, fraction),
    }
}

/// Output of an iterative run.
#[derive(Debug, Clone)]
pub struct HoleRunOutput {
    pub run: RunOutput,
    pub reports: Vec<IterationReport>,
}

/// Options not part of the numerical scheme.
#[derive(Debug, Clone, Copy)]
pub struct HoleRunOptions {
    /// Use cached responses for the iteration updates when they fit in memory.
    pub response_cache: bool,
}

impl Default for HoleRunOptions {
    fn default() -> Self {
        Self { response_cache: true }
    }
}

/// Runs an iterative simulation to `horizon`. Θ values of `state0` are set
/// to zero. `observe` receives every state and, after the initial one, the
/// step's report.
#[allow(clippy::too_many_arguments)]
pub fn run_holes(
    ctx: &RectContext,
    mask: DomainMask,
    mut state0: FieldPair,
    cfg: &IterSchemeConfig,
    horizon: f64,
    snapshot_times: &[f64],
    opts: HoleRunOptions,
    observe: &mut dyn FnMut(&FieldPair, Option<&IterationReport>),
) -> Result<HoleRunOutput> {
    cfg.validate()?;
    let n_steps = step_count(horizon, cfg.dt)?;
    if state0.phi.len() != ctx.grid.n_nodes() || state0.c.len() != ctx.grid.n_nodes() {
        return Err(Error::Dimension("initial state does not match grid".into()));
    }
    for &p in &mask.theta_nodes {
        state0.phi[p] = 0.0;
        state0.c[p] = 0.0;
    }
    let start = Instant::now();
    let f0 = factorization_count();
    let s0 = solve_count();
    let holes = HoleOperators::new(ctx, mask, cfg.variant)?;
    let facts = factorize_grid(&ctx.grid)?;
    let ops = IterOperators::new(ctx, &facts, &holes, cfg.order, cfg.dt, cfg.w, opts.response_cache)?;
    let f_setup = factorization_count();
    let t0 = state0.t;
    let t_end = t0 + horizon;

    let snap_at = snapshot_steps(snapshot_times, cfg.dt, n_steps);
    let mut snapshots = Vec::new();
    let take = |s: &FieldPair, snaps: &mut Vec<(f64, FieldPair)>| {
        for (k, &n) in snap_at.iter().enumerate() {
            if n == s.step_index {
                snaps.push((snapshot_times[k], s.clone()));
            }
        }
    };
    observe(&state0, None);
    take(&state0, &mut snapshots);
    let mut reports = Vec::with_capacity(n_steps);
    let loop_start = Instant::now();
    let mut prev: Option<FieldPair> = None;
    let mut curr = state0;
    for n in 1..=n_steps {
        let fraction = n as f64 / n_steps as f64;
        let (mut next, mut report) = match (cfg.order, &prev) {
            (Order::Euler, _) => step_iter_euler(ctx, &holes, &ops, cfg, &curr, fraction)?,
            (Order::TwoSbdf, Some(pr)) => step_iter_2sbdf(ctx, &holes, &ops, cfg, pr, &curr, fraction)?,
            (Order::TwoSbdf, None) => bootstrap_iter(ctx, &holes, &facts, cfg, &curr, t_end - t0, opts)?,
        };
        next.t = t0 + n as f64 * cfg.dt;
        report.t = next.t;
        observe(&next, Some(&report));
        take(&next, &mut snapshots);
        reports.push(report);
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
    Ok(HoleRunOutput { run: RunOutput { snapshots, final_state: curr, stats }, reports })
}

/// Second starting value for iterative 2SBDF: iterative Euler substeps of
/// the same variant. The report sums the substep iteration counts.
fn bootstrap_iter(
    ctx: &RectContext,
    holes: &HoleOperators,
    facts: &[std::sync::Arc<SpectralFactorization>],
    cfg: &IterSchemeConfig,
    state0: &FieldPair,
    span: f64,
    opts: HoleRunOptions,
) -> Result<(FieldPair, IterationReport)> {
    let start = Instant::now();
    let (count, h) = cfg.bootstrap.substeps(cfg.dt);
    let ops = IterOperators::new(ctx, facts, holes, Order::Euler, h, cfg.w, opts.response_cache && count > 50)?;
    let mut s = state0.clone();
    let mut total = IterationReport::default();
    for _ in 0..count {
        let fraction = ((s.t - state0.t) + h) / span.max(cfg.dt);
        let (next, r) = step_iter_euler(ctx, holes, &ops, cfg, &s, fraction)?;
        total.k_phi += r.k_phi;
        total.k_c += r.k_c;
        total.res_phi = r.res_phi;
        total.res_c = r.res_c;
        s = FieldPair { step_index: s.step_index, ..next };
    }
    s.t = state0.t + cfg.dt;
    s.step_index = state0.step_index + 1;
    total.step = s.step_index;
    total.t = s.t;
    if !holes.mask.is_empty() {
        let (a, b) = theta_error(&s, &holes.mask)?;
        total.max_phi_theta = a;
        total.max_c_theta = b;
    }
    total.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((s, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, rasterize_mask, AxisSpec, GridSpec, Shape};
    use crate::model::CorrosionParameters;
    use crate::rect::{step_imex_2sbdf_rect, step_imex_euler_rect, BoundaryData};
    use crate::spectral::BcKind;

    fn ctx(mx: usize, my: usize) -> RectContext {
        let g = build_grid(&GridSpec {
            axes: vec![
                AxisSpec { extent: (mx - 1) as f64 * 1e-6, interior: mx - 2, low: BcKind::Neumann, high: BcKind::Neumann },
                AxisSpec { extent: (my - 1) as f64 * 1e-6, interior: my - 2, low: BcKind::Neumann, high: BcKind::Neumann },
            ],
        })
        .unwrap();
        RectContext::new(g, CorrosionParameters::default(), BoundaryData::homogeneous(2)).unwrap()
    }

    fn bumpy(n: usize, t: f64, step: usize) -> FieldPair {
        FieldPair {
            phi: (0..n).map(|i| 0.5 + 0.4 * ((i as f64) * 0.7).sin()).collect(),
            c: (0..n).map(|i| 0.5 + 0.4 * ((i as f64) * 0.3).cos()).collect(),
            t,
            step_index: step,
        }
    }

    #[test]
    fn stop_rule_cases() {
        let g = ctx(5, 5);
        let mut theta = vec![false; 25];
        theta[12] = true;
        let mask = DomainMask::from_indicator(&g.grid, theta).unwrap();
        let u = vec![0.3; 25];
        let eps = (1e-4, 1e-3, 1e-8);
        assert!(check_stop_criteria(&u, &u, &mask, eps, 0.5).stop);
        let mut v = u.clone();
        v[12] = 0.0;
        let mut w = v.clone();
        w[0] += 2e-4;
        assert!(!check_stop_criteria(&v, &w, &mask, eps, 1.0).stop);
        let mut a = v.clone();
        a[12] = 0.9e-3;
        let mut b = a.clone();
        b[12] = 0.9e-3 + 1e-6;
        assert!(check_stop_criteria(&a, &b, &mask, eps, 1.0).stop);
        assert!(!check_stop_criteria(&a, &b, &mask, eps, 0.5).stop);
    }

    #[test]
    fn empty_mask_reduces_to_rect_bit_exactly() {
        let c = ctx(6, 7);
        let n = c.grid.n_nodes();
        let facts = factorize_grid(&c.grid).unwrap();
        for variant in [Variant::ImexI, Variant::ImexE] {
            let holes = HoleOperators::new(&c, DomainMask::empty(&c.grid), variant).unwrap();
            for order in [Order::Euler, Order::TwoSbdf] {
                let cfg = IterSchemeConfig::new(variant, order, 1e-3, 4.43e8);
                let ops = IterOperators::new(&c, &facts, &holes, order, cfg.dt, cfg.w, true).unwrap();
                let s0 = bumpy(n, 0.0, 0);
                let s1 = FieldPair { t: 1e-3, step_index: 1, ..bumpy(n, 0.0, 0) };
                let (it, rect) = match order {
                    Order::Euler => (
                        step_iter_euler(&c, &holes, &ops, &cfg, &s0, 0.5).unwrap().0,
                        step_imex_euler_rect(&c, &ops.rect, &s0).unwrap(),
                    ),
                    Order::TwoSbdf => (
                        step_iter_2sbdf(&c, &holes, &ops, &cfg, &s0, &s1, 0.5).unwrap().0,
                        step_imex_2sbdf_rect(&c, &ops.rect, &s0, &s1).unwrap(),
                    ),
                };
                assert_eq!(it.phi, rect.phi, "{variant} {order}");
                assert_eq!(it.c, rect.c, "{variant} {order}");
            }
        }
    }

    #[test]
    fn cached_and_direct_iterations_agree() {
        let c = ctx(12, 10);
        let mask = rasterize_mask(&c.grid, &[Shape::Circle { center: vec![5e-6, 4e-6], radius: 2e-6 }]).unwrap();
        let facts = factorize_grid(&c.grid).unwrap();
        let n = c.grid.n_nodes();
        for variant in [Variant::ImexI, Variant::ImexE] {
            let holes = HoleOperators::new(&c, mask.clone(), variant).unwrap();
            let mut s0 = bumpy(n, 0.0, 0);
            for &p in &mask.theta_nodes {
                s0.phi[p] = 0.0;
                s0.c[p] = 0.0;
            }
            let mut cfg = IterSchemeConfig::new(variant, Order::Euler, 1e-5, 4.43e8);
            cfg.eps1 = 1e-12;
            cfg.eps3 = 1e-14;
            let a_ops = IterOperators::new(&c, &facts, &holes, Order::Euler, cfg.dt, cfg.w, true).unwrap();
            assert!(a_ops.phi_cache.is_some());
            let b_ops = IterOperators::new(&c, &facts, &holes, Order::Euler, cfg.dt, cfg.w, false).unwrap();
            let (a, ra) = step_iter_euler(&c, &holes, &a_ops, &cfg, &s0, 0.5).unwrap();
            let (b, rb) = step_iter_euler(&c, &holes, &b_ops, &cfg, &s0, 0.5).unwrap();
            let d = max_abs_diff(&a.phi, &b.phi).max(max_abs_diff(&a.c, &b.c));
            assert!(d < 1e-12, "{variant}: {d}");
            assert_eq!((ra.k_phi, ra.k_c), (rb.k_phi, rb.k_c));
        }
    }

    #[test]
    fn reduced_mode_uses_one_phi_iteration() {
        let c = ctx(12, 10);
        let mask = rasterize_mask(&c.grid, &[Shape::Circle { center: vec![5e-6, 4e-6], radius: 2e-6 }]).unwrap();
        let mut cfg = IterSchemeConfig::new(Variant::ImexI, Order::TwoSbdf, 1e-3, 4.43e8);
        cfg.stop_mode = StopMode::ReducedSingleIteration;
        cfg.bootstrap = BootstrapRule::Substeps(4);
        let n = c.grid.n_nodes();
        let out = run_holes(&c, mask, FieldPair::constant(n, 1.0, 1.0), &cfg, 0.01, &[], HoleRunOptions::default(), &mut |_, _| {})
            .unwrap();
        assert!(out.reports[1..].iter().all(|r| r.k_phi == 1));
    }

    #[test]
    fn theta_error_on_zero_state() {
        let c = ctx(6, 6);
        let mask = rasterize_mask(&c.grid, &[Shape::Circle { center: vec![2e-6, 2e-6], radius: 1e-6 }]).unwrap();
        let s = FieldPair::constant(36, 0.0, 0.0);
        assert_eq!(theta_error(&s, &mask).unwrap(), (0.0, 0.0));
        assert!(theta_error(&s, &DomainMask::empty(&c.grid)).is_err());
    }
}
