//! One-dimensional difference Laplacians, their spectral factorizations and
//! the shifted Sylvester solvers built on them.
//!
//! A 2D field is stored as a column-major `mx × my` matrix (x fastest), so
//! the flat vector is `vec(U)`. The 2D operator `aI + b(I⊗Mx + My⊗I)` then
//! corresponds to the matrix equation `(aI + bMx)X + bXMyᵀ = Y`, which is
//! solved in the eigenbases of `Mx` and `My`. 3D fields add a z axis as the
//! slowest index and are reduced to per-slice 2D problems.

use std::cell::Cell;
use std::sync::Arc;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2, ShapeBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary condition kind at one end of an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BcKind {
    Dirichlet,
    Neumann,
}

thread_local! {
    static FACTORIZATIONS: Cell<usize> = const { Cell::new(0) };
    static SOLVES: Cell<usize> = const { Cell::new(0) };
}

/// Number of spectral factorizations computed on the current thread.
pub fn factorization_count() -> usize {
    FACTORIZATIONS.with(|c| c.get())
}

/// Number of shifted linear solves performed on the current thread.
pub fn solve_count() -> usize {
    SOLVES.with(|c| c.get())
}

fn bump(counter: &'static std::thread::LocalKey<Cell<usize>>) {
    counter.with(|c| c.set(c.get() + 1));
}

/// Tridiagonal 1D Laplacian. `sub[i]` is entry `(i+1, i)`, `sup[i]` is
/// entry `(i, i+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian1D {
    pub low: BcKind,
    pub high: BcKind,
    pub m: usize,
    pub dr: f64,
    pub diag: Vec<f64>,
    pub sub: Vec<f64>,
    pub sup: Vec<f64>,
}

/// Builds `(1/dr²)·tridiag(1, −2, 1)` of dimension `m`. A Neumann end
/// replaces the off-diagonal of its boundary row by 2.
pub fn laplacian_1d(low: BcKind, high: BcKind, m: usize, dr: f64) -> Result<Laplacian1D> {
    if m < 2 {
        return Err(Error::Config(format!("laplacian dimension must be >= 2, got {m}")));
    }
    if !(dr > 0.0 && dr.is_finite()) {
        return Err(Error::Config(format!("grid spacing must be positive, got {dr}")));
    }
    let s = 1.0 / (dr * dr);
    let diag = vec![-2.0 * s; m];
    let mut sub = vec![s; m - 1];
    let mut sup = vec![s; m - 1];
    if low == BcKind::Neumann {
        sup[0] = 2.0 * s;
    }
    if high == BcKind::Neumann {
        sub[m - 2] = 2.0 * s;
    }
    Ok(Laplacian1D { low, high, m, dr, diag, sub, sup })
}

impl Laplacian1D {
    /// Arbitrary tridiagonal matrix, mainly for degenerate test cases such
    /// as the `1×1` zero matrix. Boundary kinds are recorded as Neumann
    /// when the matrix is not symmetric at that end.
    pub fn from_tridiagonal(diag: Vec<f64>, sub: Vec<f64>, sup: Vec<f64>, dr: f64) -> Result<Self> {
        let m = diag.len();
        if m == 0 || sub.len() + 1 != m || sup.len() + 1 != m {
            return Err(Error::Dimension("inconsistent tridiagonal lengths".into()));
        }
        let low = if m > 1 && sub[0] != sup[0] { BcKind::Neumann } else { BcKind::Dirichlet };
        let high = if m > 1 && sub[m - 2] != sup[m - 2] { BcKind::Neumann } else { BcKind::Dirichlet };
        Ok(Self { low, high, m, dr, diag, sub, sup })
    }

    pub fn is_symmetric(&self) -> bool {
        self.sub == self.sup
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else if j == i + 1 {
            self.sup[i]
        } else if i == j + 1 {
            self.sub[j]
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.m, self.m), |(i, j)| self.get(i, j))
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.m)
            .map(|i| {
                let mut r = self.diag[i].abs();
                if i > 0 {
                    r += self.sub[i - 1].abs();
                }
                if i + 1 < self.m {
                    r += self.sup[i].abs();
                }
                r
            })
            .fold(0.0, f64::max)
    }

    /// Largest eigenvalue modulus, from the closed forms of the two pure
    /// kinds and a Gershgorin bound for mixed ends.
    pub fn spectral_radius(&self) -> f64 {
        let s = 1.0 / (self.dr * self.dr);
        let m = self.m as f64;
        match (self.low, self.high) {
            (BcKind::Dirichlet, BcKind::Dirichlet) => {
                4.0 * s * (m * std::f64::consts::PI / (2.0 * (m + 1.0))).sin().powi(2)
            }
            (BcKind::Neumann, BcKind::Neumann) => 4.0 * s,
            _ => {
                let k = m - 0.5;
                4.0 * s * (k * std::f64::consts::PI / (2.0 * m)).sin().powi(2)
            }
        }
    }
}

/// Eigen-decomposition `M = Γ Λ Γ⁻¹` with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct SpectralFactorization {
    pub gamma: Array2<f64>,
    pub gamma_inv: Array2<f64>,
    pub lambda: Array1<f64>,
    /// `Γᵀ` stored contiguously.
    pub gamma_t: Array2<f64>,
    /// `Γ⁻ᵀ` stored contiguously.
    pub gamma_inv_t: Array2<f64>,
}

impl SpectralFactorization {
    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    /// `‖ΓΛΓ⁻¹ − M‖∞`.
    pub fn residual(&self, m: &Laplacian1D) -> f64 {
        let mut gl = self.gamma.clone();
        for (j, mut col) in gl.columns_mut().into_iter().enumerate() {
            col *= self.lambda[j];
        }
        let rec = gl.dot(&self.gamma_inv);
        let d = &rec - &m.to_dense();
        d.rows().into_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }
}

/// Symmetric tridiagonal eigensolver (implicit QL with Wilkinson-style
/// shifts). `d` holds the diagonal, `e[i]` the entry `(i, i+1)`. On return
/// `d` holds the eigenvalues (unsorted) and the columns of the returned
/// matrix the orthonormal eigenvectors.
pub fn symmetric_tridiagonal_eigen(d: &mut [f64], e_in: &[f64]) -> Result<Array2<f64>> {
    let n = d.len();
    let mut v = Array2::<f64>::eye(n);
    if n == 1 {
        return Ok(v);
    }
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(&e_in[..n - 1]);
    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m == n {
            m = n - 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 60 {
                    return Err(Error::Factorization { residual: e[l].abs(), tol: eps * tst1 });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        let vk1 = v[[k, i + 1]];
                        let vk = v[[k, i]];
                        v[[k, i + 1]] = s * vk + c * vk1;
                        v[[k, i]] = c * vk - s * vk1;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(v)
}

/// Computes `M = ΓΛΓ⁻¹`. Symmetric Dirichlet matrices use the analytic sine
/// basis; other kinds are similarity-symmetrized with a diagonal scaling and
/// handed to the tridiagonal eigensolver.
pub fn spectral_factorize(m: &Laplacian1D) -> Result<SpectralFactorization> {
    bump(&FACTORIZATIONS);
    let n = m.m;
    let uniform_dirichlet = m.low == BcKind::Dirichlet
        && m.high == BcKind::Dirichlet
        && n >= 2
        && {
            let s = 1.0 / (m.dr * m.dr);
            m.diag.iter().all(|&v| v == -2.0 * s)
                && m.sub.iter().all(|&v| v == s)
                && m.sup.iter().all(|&v| v == s)
        };

    let (gamma, gamma_inv, lambda) = if uniform_dirichlet {
        let np1 = (n + 1) as f64;
        let norm = (2.0 / np1).sqrt();
        let s = 1.0 / (m.dr * m.dr);
        // ascending eigenvalues: k = n, n−1, ..., 1
        let ks: Vec<usize> = (1..=n).rev().collect();
        let lambda = Array1::from_iter(ks.iter().map(|&k| {
            let t = (k as f64 * std::f64::consts::PI / (2.0 * np1)).sin();
            -4.0 * s * t * t
        }));
        let gamma = Array2::from_shape_fn((n, n), |(i, col)| {
            let k = ks[col] as f64;
            norm * ((i + 1) as f64 * k * std::f64::consts::PI / np1).sin()
        });
        let gamma_inv = gamma.t().to_owned();
        (gamma, gamma_inv, lambda)
    } else {
        // T = D S D⁻¹ with S symmetric; d_{i+1} = d_i·√(sub_i/sup_i)
        let mut dscale = vec![1.0; n];
        let mut off = vec![0.0; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            let (lo, up) = (m.sub[i], m.sup[i]);
            if lo * up < 0.0 {
                return Err(Error::Factorization { residual: f64::INFINITY, tol: 0.0 });
            }
            if lo == 0.0 || up == 0.0 {
                dscale[i + 1] = dscale[i];
                off[i] = 0.0;
            } else {
                dscale[i + 1] = dscale[i] * (lo / up).sqrt();
                off[i] = (lo * up).sqrt() * lo.signum();
            }
        }
        let mut d = m.diag.clone();
        let q = symmetric_tridiagonal_eigen(&mut d, &off)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
        let lambda = Array1::from_iter(order.iter().map(|&k| d[k]));
        let gamma = Array2::from_shape_fn((n, n), |(i, col)| dscale[i] * q[[i, order[col]]]);
        let gamma_inv = Array2::from_shape_fn((n, n), |(row, j)| q[[j, order[row]]] / dscale[j]);
        (gamma, gamma_inv, lambda)
    };

    let gamma_t = gamma.t().as_standard_layout().into_owned();
    let gamma_inv_t = gamma_inv.t().as_standard_layout().into_owned();
    let fact = SpectralFactorization { gamma, gamma_inv, lambda, gamma_t, gamma_inv_t };
    let tol = 1e-10 * m.norm_inf();
    let res = fact.residual(m);
    if !(res <= tol) {
        return Err(Error::Factorization { residual: res, tol });
    }
    Ok(fact)
}

/// Precomputed solver for `(aI + bMx)X + bXMyᵀ = Y`.
#[derive(Debug, Clone)]
pub struct SylvesterOperator {
    pub a: f64,
    pub b: f64,
    pub fact_x: Arc<SpectralFactorization>,
    pub fact_y: Arc<SpectralFactorization>,
    /// `Υ_ij = 1/(a + bλx_i + bλy_j)`.
    pub upsilon: Array2<f64>,
}

fn reciprocal_table(a: f64, b: f64, lx: &Array1<f64>, ly: &Array1<f64>, shift: f64) -> Result<Array2<f64>> {
    let mut ups = Array2::zeros((lx.len(), ly.len()));
    for ((i, j), u) in ups.indexed_iter_mut() {
        let den = a + shift + b * lx[i] + b * ly[j];
        if den == 0.0 || !den.is_finite() {
            return Err(Error::SingularShift(vec![i, j]));
        }
        *u = 1.0 / den;
    }
    Ok(ups)
}

impl SylvesterOperator {
    pub fn new(a: f64, b: f64, fact_x: Arc<SpectralFactorization>, fact_y: Arc<SpectralFactorization>) -> Result<Self> {
        let upsilon = reciprocal_table(a, b, &fact_x.lambda, &fact_y.lambda, 0.0)?;
        Ok(Self { a, b, fact_x, fact_y, upsilon })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.fact_x.dim(), self.fact_y.dim())
    }

    /// Solves with a right-hand side given as a matrix view of any layout
    /// and writes the solution into `out`.
    pub fn solve_into(&self, y: ArrayView2<f64>, out: ArrayViewMut2<f64>) -> Result<()> {
        let (mx, my) = self.dims();
        if y.dim() != (mx, my) || out.dim() != (mx, my) {
            return Err(Error::Dimension(format!(
                "sylvester operator is {mx}x{my}, got rhs {:?}",
                y.dim()
            )));
        }
        transform_solve(&self.fact_x, &self.fact_y, &self.upsilon, y, out);
        bump(&SOLVES);
        Ok(())
    }

    pub fn solve(&self, y: &Array2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(self.dims());
        self.solve_into(y.view(), out.view_mut())?;
        Ok(out)
    }
}

fn transform_solve(
    fx: &SpectralFactorization,
    fy: &SpectralFactorization,
    ups: &Array2<f64>,
    y: ArrayView2<f64>,
    mut out: ArrayViewMut2<f64>,
) {
    let t1 = fx.gamma_inv.dot(&y);
    let mut t2 = t1.dot(&fy.gamma_inv_t);
    t2 *= ups;
    let t3 = fx.gamma.dot(&t2);
    general_mat_mul(1.0, &t3, &fy.gamma_t, 0.0, &mut out);
}

/// Convenience wrapper: factorizes and solves one 2D Sylvester problem.
pub fn sylvester_solve(op: &SylvesterOperator, y: &Array2<f64>) -> Result<Array2<f64>> {
    op.solve(y)
}

/// Precomputed solver for `(aI + b·M3)u = g` with
/// `M3 = Iz⊗Iy⊗Mx + Iz⊗My⊗Ix + Mz⊗Iy⊗Ix`.
#[derive(Debug, Clone)]
pub struct SylvesterOperator3 {
    pub a: f64,
    pub b: f64,
    pub fact_x: Arc<SpectralFactorization>,
    pub fact_y: Arc<SpectralFactorization>,
    pub fact_z: Arc<SpectralFactorization>,
    /// One reciprocal table per z-mode, for the shifted slice problems
    /// `((a + bλz_k)I + bMx)Z_k + bZ_kMyᵀ = H_k`.
    pub slices: Vec<Array2<f64>>,
}

impl SylvesterOperator3 {
    pub fn new(
        a: f64,
        b: f64,
        fact_x: Arc<SpectralFactorization>,
        fact_y: Arc<SpectralFactorization>,
        fact_z: Arc<SpectralFactorization>,
    ) -> Result<Self> {
        let mut slices = Vec::with_capacity(fact_z.dim());
        for (k, &lz) in fact_z.lambda.iter().enumerate() {
            let t = reciprocal_table(a, b, &fact_x.lambda, &fact_y.lambda, b * lz).map_err(|e| match e {
                Error::SingularShift(mut v) => {
                    v.push(k);
                    Error::SingularShift(v)
                }
                other => other,
            })?;
            slices.push(t);
        }
        Ok(Self { a, b, fact_x, fact_y, fact_z, slices })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.fact_x.dim(), self.fact_y.dim(), self.fact_z.dim())
    }

    /// `g` and `out` are flat vectors in x-fastest order.
    pub fn solve_flat(&self, g: &[f64], out: &mut [f64]) -> Result<()> {
        let (mx, my, mz) = self.dims();
        let n = mx * my * mz;
        if g.len() != n || out.len() != n {
            return Err(Error::Dimension(format!("3D operator expects {n} values, got {}", g.len())));
        }
        let nxy = mx * my;
        // mode-3 unfolding: column k holds slice k
        let gu = ArrayView2::from_shape((nxy, mz).f(), g).expect("shape");
        let mut h = Array2::<f64>::zeros((nxy, mz).f());
        general_mat_mul(1.0, &gu, &self.fact_z.gamma_inv_t, 0.0, &mut h);
        let mut z = Array2::<f64>::zeros((nxy, mz).f());
        let hs = h.as_slice_memory_order().expect("contiguous");
        let zs = z.as_slice_memory_order_mut().expect("contiguous");
        for (k, zk) in zs.chunks_mut(nxy).enumerate() {
            let hk = ArrayView2::from_shape((mx, my).f(), &hs[k * nxy..(k + 1) * nxy]).expect("slice shape");
            let zk = ArrayViewMut2::from_shape((mx, my).f(), zk).expect("slice shape");
            transform_solve(&self.fact_x, &self.fact_y, &self.slices[k], hk, zk);
        }
        let mut o = ArrayViewMut2::from_shape((nxy, mz).f(), out).expect("shape");
        general_mat_mul(1.0, &z, &self.fact_z.gamma_t, 0.0, &mut o);
        bump(&SOLVES);
        Ok(())
    }
}

/// Solves `(aI + b·M3)u = g` for a tensor `g` stored x-fastest.
pub fn solve_3d(
    a: f64,
    b: f64,
    mx: &Laplacian1D,
    my: &Laplacian1D,
    mz: &Laplacian1D,
    g: &[f64],
) -> Result<Vec<f64>> {
    let op = SylvesterOperator3::new(
        a,
        b,
        Arc::new(spectral_factorize(mx)?),
        Arc::new(spectral_factorize(my)?),
        Arc::new(spectral_factorize(mz)?),
    )?;
    let mut out = vec![0.0; g.len()];
    op.solve_flat(g, &mut out)?;
    Ok(out)
}

/// Shifted solver for either dimension, acting on flat x-fastest vectors.
#[derive(Debug, Clone)]
pub enum ShiftedSolver {
    Planar(SylvesterOperator),
    Volume(SylvesterOperator3),
}

impl ShiftedSolver {
    /// Builds the operator for `aI + bM` from shared per-axis factorizations.
    pub fn new(a: f64, b: f64, facts: &[Arc<SpectralFactorization>]) -> Result<Self> {
        match facts {
            [fx, fy] => Ok(Self::Planar(SylvesterOperator::new(a, b, fx.clone(), fy.clone())?)),
            [fx, fy, fz] => Ok(Self::Volume(SylvesterOperator3::new(a, b, fx.clone(), fy.clone(), fz.clone())?)),
            _ => Err(Error::Dimension("solver needs 2 or 3 axes".into())),
        }
    }

    pub fn coefficients(&self) -> (f64, f64) {
        match self {
            Self::Planar(op) => (op.a, op.b),
            Self::Volume(op) => (op.a, op.b),
        }
    }

    pub fn solve_flat(&self, g: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            Self::Planar(op) => {
                let (mx, my) = op.dims();
                if g.len() != mx * my || out.len() != mx * my {
                    return Err(Error::Dimension(format!("expected {} values, got {}", mx * my, g.len())));
                }
                let y = ArrayView2::from_shape((mx, my).f(), g).expect("shape");
                let o = ArrayViewMut2::from_shape((mx, my).f(), out).expect("shape");
                op.solve_into(y, o)
            }
            Self::Volume(op) => op.solve_flat(g, out),
        }
    }

    pub fn solve(&self, g: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; g.len()];
        self.solve_flat(g, &mut out)?;
        Ok(out)
    }
}

/// Applies the Kronecker-sum Laplacian `Σ_r M_r` (acting along axis r) to a
/// flat x-fastest vector: `out = M·u`.
pub fn apply_kronecker_sum(axes: &[Laplacian1D], u: &[f64], out: &mut [f64]) {
    let dims: Vec<usize> = axes.iter().map(|a| a.m).collect();
    let n: usize = dims.iter().product();
    assert_eq!(u.len(), n);
    assert_eq!(out.len(), n);
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut stride = 1;
    for (r, lap) in axes.iter().enumerate() {
        let m = dims[r];
        let outer = n / (stride * m);
        for o in 0..outer {
            let base_o = o * stride * m;
            for inner in 0..stride {
                let base = base_o + inner;
                // i = 0
                out[base] += lap.diag[0] * u[base] + lap.sup[0] * u[base + stride];
                for i in 1..m - 1 {
                    let p = base + i * stride;
                    out[p] += lap.sub[i - 1] * u[p - stride] + lap.diag[i] * u[p] + lap.sup[i] * u[p + stride];
                }
                let p = base + (m - 1) * stride;
                out[p] += lap.sub[m - 2] * u[p - stride] + lap.diag[m - 1] * u[p];
            }
        }
        stride *= m;
    }
}

/// Dense Kronecker-sum Laplacian for small grids (reference assembly).
pub fn kronecker_sum_dense(axes: &[Laplacian1D]) -> Array2<f64> {
    let n: usize = axes.iter().map(|a| a.m).product();
    let mut out = Array2::zeros((n, n));
    let mut stride = 1;
    for lap in axes {
        let m = lap.m;
        for p in 0..n {
            let i = (p / stride) % m;
            for j in i.saturating_sub(1)..(i + 2).min(m) {
                let q = p + j * stride - i * stride;
                out[[p, q]] += lap.get(i, j);
            }
        }
        stride *= m;
    }
    out
}
