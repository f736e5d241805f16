//! Convergence bounds for the iterative schemes, measured spectral radii of
//! their iteration matrices, and run diagnostics (front position, relative
//! errors, regression fits).

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, SparseMatrix};
use crate::holes::Variant;
use crate::model::CorrosionParameters;
use crate::rect::{FieldPair, Order};
use crate::spectral::{BcKind, ShiftedSolver, SpectralFactorization};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Equation {
    Phi,
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GeometryClass {
    #[default]
    Generic,
    Circle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundQuery {
    pub variant: Variant,
    pub order: Order,
    pub bc_outer: BcKind,
    pub equation: Equation,
    /// Grid spacings `(Δx, Δy[, Δz])`.
    pub spacings: Vec<f64>,
    pub dt: f64,
    pub w: f64,
    pub params: CorrosionParameters,
    pub geometry: GeometryClass,
    /// Exact `(‖N‖₁, ‖N‖∞)` of a concrete mask; worst-case constants when absent.
    pub norms: Option<(f64, f64)>,
    /// `ρ(M)`; the Gershgorin value `Σ 4/Δ²` when absent.
    pub rho_m: Option<f64>,
}

impl BoundQuery {
    pub fn new(variant: Variant, order: Order, bc_outer: BcKind, equation: Equation, h: f64, dt: f64) -> Self {
        Self {
            variant,
            order,
            bc_outer,
            equation,
            spacings: vec![h, h],
            dt,
            w: crate::model::DEFAULT_W,
            params: CorrosionParameters::default(),
            geometry: GeometryClass::Generic,
            norms: None,
            rho_m: None,
        }
    }

    pub fn gamma(&self) -> f64 {
        match self.order {
            Order::Euler => 1.0,
            Order::TwoSbdf => 1.5,
        }
    }

    fn diffusion(&self) -> f64 {
        match self.equation {
            Equation::Phi => self.params.d_phi,
            Equation::C => self.params.d_c,
        }
    }

    /// `γ + wΔt` for φ, `γ` for c.
    fn gamma_eff(&self) -> f64 {
        match self.equation {
            Equation::Phi => self.gamma() + self.w * self.dt,
            Equation::C => self.gamma(),
        }
    }

    fn s(&self) -> f64 {
        self.spacings.iter().map(|h| 1.0 / (h * h)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Bound {
    Value(f64),
    /// The Neumann step condition `γ − DΔt Σ 1/Δ² > 0` fails.
    Inadmissible,
}

impl Bound {
    pub fn value(&self) -> Option<f64> {
        match self {
            Bound::Value(v) => Some(*v),
            Bound::Inadmissible => None,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Value(v) => write!(f, "{v:e}"),
            Bound::Inadmissible => f.write_str("inadmissible"),
        }
    }
}

/// Upper bound on the spectral radius of the iteration matrix.
pub fn bound_spectral_radius(q: &BoundQuery) -> Bound {
    let d = q.diffusion();
    let dt = q.dt;
    let g = q.gamma_eff();
    let s = q.s();
    let neumann = q.bc_outer == BcKind::Neumann;
    if neumann && g - d * dt * s <= 0.0 {
        return Bound::Inadmissible;
    }
    let v = match (q.variant, q.geometry) {
        (Variant::ImexI, _) => {
            if neumann {
                4.0 * d * dt * s / (g - d * dt * s)
            } else {
                4.0 * d * dt * s / g
            }
        }
        (Variant::ImexE, GeometryClass::Circle) => {
            let h = q.spacings.iter().copied().fold(f64::INFINITY, f64::min);
            let h2 = h * h;
            let k = d * dt / h2;
            if neumann {
                if g - 2.0 * k <= 0.0 {
                    return Bound::Inadmissible;
                }
                2.0 * 6f64.sqrt() * k * k / g * (4.0 / (g + 8.0 * k) + 1.0 / (g - 2.0 * k))
            } else {
                8.0 * 6f64.sqrt() * k * k / (g * (g + 8.0 * k))
            }
        }
        (Variant::ImexE, GeometryClass::Generic) => {
            let rho = q.rho_m.unwrap_or(4.0 * s);
            let norm = match q.norms {
                Some((n1, ninf)) => (n1 * ninf).sqrt(),
                None => 2.0 * s,
            };
            let lead = d * d * dt * dt * norm / g;
            if neumann {
                lead * (rho / (g + dt * d * rho) + s / (g - dt * d * s))
            } else {
                lead * rho / (g + dt * d * rho)
            }
        }
    };
    Bound::Value(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepConditions {
    /// The φ condition holds for every Δt.
    pub unconditional_phi: bool,
    /// Largest admissible Δt for φ; infinite when unconditional.
    pub dt_max_phi: f64,
    pub dt_max_c: f64,
}

/// Sufficient conditions on Δt for convergence of the iterations, with
/// `h = min(Δx, Δy)`.
pub fn sufficient_step_conditions(
    variant: Variant,
    order: Order,
    bc_outer: BcKind,
    p: &CorrosionParameters,
    w: f64,
    h: f64,
) -> StepConditions {
    let gamma = match order {
        Order::Euler => 1.0,
        Order::TwoSbdf => 1.5,
    };
    let h2 = h * h;
    let s41 = 41f64.sqrt();
    // (threshold constant κ with h² > κD_φ/w, Δt_φ, Δt_c)
    let (kappa, dt_phi, dt_c) = match (variant, bc_outer) {
        (Variant::ImexI, BcKind::Dirichlet) => {
            (8.0, gamma * h2 / (8.0 * p.d_phi - w * h2), gamma * h2 / (8.0 * p.d_c))
        }
        (Variant::ImexI, BcKind::Neumann) => {
            (10.0, gamma * h2 / (10.0 * p.d_phi - w * h2), gamma * h2 / (10.0 * p.d_c))
        }
        (Variant::ImexE, BcKind::Dirichlet) => {
            let k = 4.0 * 2f64.sqrt();
            (k, gamma * h2 / (k * p.d_phi - w * h2), gamma * (1.0 + 3f64.sqrt()) * h2 / (8.0 * p.d_c))
        }
        (Variant::ImexE, BcKind::Neumann) => (
            1.0 + s41,
            gamma * (s41 - 1.0) * h2 / (40.0 * p.d_phi + 2.0 * w * h2),
            gamma * (s41 - 1.0) * h2 / (40.0 * p.d_c),
        ),
    };
    let unconditional_phi = h2 > kappa * p.d_phi / w;
    StepConditions { unconditional_phi, dt_max_phi: if unconditional_phi { f64::INFINITY } else { dt_phi }, dt_max_c: dt_c }
}

/// Relative change between power-iteration estimates accepted as converged.
pub const POWER_TOL: f64 = 1e-6;
/// Support sizes up to this use the assembled reduced matrix directly.
pub const DENSE_SUPPORT_LIMIT: usize = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadiusEstimate {
    pub radius: f64,
    /// Power iterations used; zero when the dense path was taken.
    pub iterations: usize,
    pub dense: bool,
}

/// `ρ(α(βI − αM)⁻¹N)`, with `M` the Kronecker sum of the factorized axes.
///
/// The nonzero spectrum equals that of the `r×r` matrix
/// `K = α N_{R,·}(βI − αM)⁻¹_{·,R}` on the row support `R` of `N`. Small
/// supports are assembled and solved densely; large ones use power iteration
/// with restarts, falling back to the dense path when the restarts disagree.
pub fn actual_spectral_radius(alpha: f64, beta: f64, facts: &[Arc<SpectralFactorization>], n: &SparseMatrix) -> Result<RadiusEstimate> {
    if n.is_zero() {
        return Ok(RadiusEstimate { radius: 0.0, iterations: 0, dense: false });
    }
    let solver = ShiftedSolver::new(beta, -alpha, facts)?;
    let r = n.rows.len();
    if r <= DENSE_SUPPORT_LIMIT {
        return Ok(RadiusEstimate { radius: reduced_dense_radius(alpha, &solver, n)?, iterations: 0, dense: true });
    }
    let mut estimates = Vec::new();
    let mut total = 0;
    for restart in 0..3 {
        let (rho, it) = power_iteration(alpha, &solver, n, restart)?;
        total += it;
        if let Some(rho) = rho {
            estimates.push(rho);
        }
    }
    let lo = estimates.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = estimates.iter().copied().fold(0.0, f64::max);
    if estimates.len() == 3 && hi - lo <= 0.01 * hi {
        return Ok(RadiusEstimate { radius: hi, iterations: total, dense: false });
    }
    Ok(RadiusEstimate { radius: reduced_dense_radius(alpha, &solver, n)?, iterations: total, dense: true })
}

fn reduced_dense_radius(alpha: f64, solver: &ShiftedSolver, n: &SparseMatrix) -> Result<f64> {
    let r = n.rows.len();
    let mut k = DMatrix::<f64>::zeros(r, r);
    let mut e = vec![0.0; n.n];
    for (j, &q) in n.rows.iter().enumerate() {
        e[q] = 1.0;
        let col = solver.solve(&e)?;
        e[q] = 0.0;
        let ncol = n.apply(&col);
        for (i, &p) in n.rows.iter().enumerate() {
            k[(i, j)] = alpha * ncol[p];
        }
    }
    Ok(dense_radius(k))
}

/// Spectral radius of a small dense matrix. The QR iteration can stall on
/// nearly nilpotent input; then the power-norm limit is used instead.
fn dense_radius(k: DMatrix<f64>) -> f64 {
    let cap = 100 * k.nrows().max(10);
    match nalgebra::Schur::try_new(k.clone(), f64::EPSILON, cap) {
        Some(schur) => schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max),
        None => gelfand_radius(k),
    }
}

/// `‖K^(2^j)‖^(1/2^j)` by repeated squaring, rescaled at every step.
fn gelfand_radius(mut a: DMatrix<f64>) -> f64 {
    let mut log_scale = 0.0;
    let mut est = f64::INFINITY;
    for j in 0..40 {
        let nrm = a.norm();
        if nrm == 0.0 {
            return 0.0;
        }
        a /= nrm;
        log_scale += nrm.ln();
        est = (log_scale / 2f64.powi(j)).exp();
        a = &a * &a;
        log_scale *= 2.0;
    }
    est
}

/// Power iteration on `y ↦ αN(βI − αM)⁻¹y` restricted to the row support,
/// using a two-step norm ratio so that a dominant complex pair also settles.
fn power_iteration(alpha: f64, solver: &ShiftedSolver, n: &SparseMatrix, seed: usize) -> Result<(Option<f64>, usize)> {
    let cap = 2000;
    let mut y = vec![0.0; n.n];
    for (i, &p) in n.rows.iter().enumerate() {
        // indicator seed, perturbed per restart
        y[p] = 1.0 + 0.37 * (((i + 1) * (seed + 1)) as f64).sin() * seed as f64;
    }
    normalize(&mut y);
    let apply = |y: &[f64]| -> Result<Vec<f64>> {
        let z = solver.solve(y)?;
        let mut out = vec![0.0; y.len()];
        n.mul_add(alpha, &z, &mut out);
        Ok(out)
    };
    let mut prev = f64::NAN;
    for it in 1..=cap {
        let y1 = apply(&y)?;
        let mut y2 = apply(&y1)?;
        let nrm = norm(&y2);
        if nrm == 0.0 {
            return Ok((Some(0.0), it));
        }
        let est = nrm.sqrt();
        y2.iter_mut().for_each(|v| *v /= nrm);
        y = y2;
        if (est - prev).abs() <= POWER_TOL * est {
            return Ok((Some(est), it));
        }
        prev = est;
    }
    Ok((None, cap))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Which end of an axis a front is measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum End {
    Low,
    High,
}

/// Distance from the chosen boundary of `axis` to the first crossing of
/// `threshold` by `c` along the grid's center line, linearly interpolated.
pub fn front_position(grid: &Grid, c: &[f64], axis: usize, threshold: f64, from: End) -> Result<f64> {
    if axis >= grid.dim() {
        return Err(Error::Analysis(format!("axis {axis} out of range")));
    }
    if c.len() != grid.n_nodes() {
        return Err(Error::Dimension("field does not match grid".into()));
    }
    let counts = grid.dims3();
    let mut base = [counts[0] / 2, counts[1] / 2, counts[2] / 2];
    let ax = &grid.axes[axis];
    let line: Vec<(f64, f64)> = (0..ax.count)
        .map(|i| {
            base[axis] = i;
            let x = ax.coordinate(i);
            let dist = match from {
                End::Low => x,
                End::High => ax.spec.extent - x,
            };
            (dist, c[grid.index(base[0], base[1], base[2])])
        })
        .collect();
    let ordered: Vec<(f64, f64)> = match from {
        End::Low => line,
        End::High => line.into_iter().rev().collect(),
    };
    let side = |v: f64| v >= threshold;
    for w in ordered.windows(2) {
        let (d0, v0) = w[0];
        let (d1, v1) = w[1];
        if side(v0) != side(v1) {
            return Ok(d0 + (threshold - v0) * (d1 - d0) / (v1 - v0));
        }
    }
    Err(Error::Analysis("no threshold crossing on the center line".into()))
}

/// Relative Euclidean errors `(‖φ−φ_ref‖/‖φ_ref‖, ‖c−c_ref‖/‖c_ref‖)`.
pub fn error_norms(state: &FieldPair, reference: &FieldPair) -> Result<(f64, f64)> {
    if state.phi.len() != reference.phi.len() || state.c.len() != reference.c.len() {
        return Err(Error::Dimension("state and reference differ in size".into()));
    }
    let rel = |a: &[f64], b: &[f64]| -> Result<f64> {
        let den = norm(b);
        if den == 0.0 {
            return Err(Error::Analysis("reference has zero norm".into()));
        }
        Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt() / den)
    };
    Ok((rel(&state.phi, &reference.phi)?, rel(&state.c, &reference.c)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares line through `(x, y)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Analysis("a fit needs at least two paired points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Analysis("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit { slope, intercept, r2 })
}

/// Fit of `log y` against `log x`.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::Analysis("log-log fit needs positive data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly)
}

/// One row of a bound sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundRow {
    pub variant: Variant,
    pub bc: BcKind,
    pub dt: f64,
    pub h: f64,
    pub gamma: f64,
    pub bound: Option<f64>,
    pub actual: Option<f64>,
    pub admissible: bool,
}
