//! Dense reference implementations shared by the integration tests.
#![allow(dead_code)]

use corrosim::grid::{Grid, DomainMask};
use corrosim::model::{reaction_f1, reaction_f2, CorrosionParameters};
use corrosim::spectral::BcKind;
use nalgebra::{DMatrix, DVector};

/// `tridiag(1, −2, 1)/dr²` with the Neumann rows doubled, built from scratch.
pub fn lap1d(low: BcKind, high: BcKind, m: usize, dr: f64) -> DMatrix<f64> {
    let s = 1.0 / (dr * dr);
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        a[(i, i)] = -2.0 * s;
        if i > 0 {
            a[(i, i - 1)] = s;
        }
        if i + 1 < m {
            a[(i, i + 1)] = s;
        }
    }
    if low == BcKind::Neumann {
        a[(0, 1)] = 2.0 * s;
    }
    if high == BcKind::Neumann {
        a[(m - 1, m - 2)] = 2.0 * s;
    }
    a
}

/// `Σ_r I ⊗ … ⊗ M_r ⊗ … ⊗ I` for x-fastest flattening.
pub fn kron_sum(axes: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = axes.iter().map(|a| a.nrows()).product();
    let mut out = DMatrix::zeros(n, n);
    for r in 0..axes.len() {
        let mut term = DMatrix::<f64>::identity(1, 1);
        // slowest axis first
        for s in (0..axes.len()).rev() {
            let f = if s == r { axes[s].clone() } else { DMatrix::identity(axes[s].nrows(), axes[s].nrows()) };
            term = term.kronecker(&f);
        }
        out += term;
    }
    out
}

pub fn grid_laplacian(grid: &Grid) -> DMatrix<f64> {
    let axes: Vec<_> = grid.axes.iter().map(|a| lap1d(a.spec.low, a.spec.high, a.count, a.dr)).collect();
    kron_sum(&axes)
}

/// `(N1, N2)` assembled densely from the mask.
pub fn corrections(m: &DMatrix<f64>, mask: &DomainMask) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let mut n1 = DMatrix::zeros(n, n);
    let mut n2 = DMatrix::zeros(n, n);
    for p in 0..n {
        for q in 0..n {
            if mask.theta[p] && !mask.theta[q] {
                n1[(p, q)] = m[(p, q)];
            }
            if mask.theta[q] {
                n2[(p, q)] = m[(p, q)];
            }
        }
    }
    (n1, n2)
}

/// Dirichlet boundary stencil contributions for a constant edge value `g`.
pub fn psi(grid: &Grid, g: f64) -> DVector<f64> {
    let n = grid.n_nodes();
    let mut v = DVector::zeros(n);
    for p in 0..n {
        let ix = grid.multi_index(p);
        for (r, a) in grid.axes.iter().enumerate() {
            let s = g / (a.dr * a.dr);
            if a.spec.low == BcKind::Dirichlet && ix[r] == 0 {
                v[p] += s;
            }
            if a.spec.high == BcKind::Dirichlet && ix[r] == a.count - 1 {
                v[p] += s;
            }
        }
    }
    v
}

pub fn solve(a: DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    a.lu().solve(b).expect("nonsingular")
}

pub fn f1(phi: &DVector<f64>, c: &DVector<f64>, p: &CorrosionParameters) -> DVector<f64> {
    DVector::from_iterator(phi.len(), phi.iter().zip(c.iter()).map(|(&a, &b)| reaction_f1(a, b, p)))
}

pub fn f2(phi: &DVector<f64>, p: &CorrosionParameters) -> DVector<f64> {
    phi.map(|a| reaction_f2(a, p))
}

pub fn vec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

pub fn max_diff(a: &[f64], b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_abs(a: &DVector<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Deterministic smooth field with values in roughly `[lo, hi]`.
pub fn wavy(n: usize, seed: f64, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * (0.5 + 0.5 * ((i as f64) * 0.731 + seed).sin())).collect()
}

pub mod oracle {
    use super::*;
    use std::sync::Arc;

    use corrosim::grid::{build_grid, rasterize_mask, AxisSpec, GridSpec, Shape};
    use corrosim::holes::{step_iter_2sbdf, step_iter_euler, HoleOperators, IterOperators, IterSchemeConfig, Variant};
    use corrosim::rect::{
        factorize_grid, step_imex_2sbdf_rect, step_imex_euler_rect, BoundaryData, FieldPair, Order, RectContext,
        RectOperators,
    };
    use corrosim::spectral::{laplacian_1d, solve_3d, spectral_factorize, ShiftedSolver};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub const DT: f64 = 1e-4;
    pub const W: f64 = 4.43e8;

    pub fn grid2(mx: usize, my: usize, bx: (BcKind, BcKind), by: (BcKind, BcKind)) -> Grid {
        let h = 1e-6;
        let ext = |m: usize, b: (BcKind, BcKind)| {
            // a Neumann end contributes a node, so fewer cells are needed
            let cells = m + 1 - (b.0 == BcKind::Neumann) as usize - (b.1 == BcKind::Neumann) as usize;
            cells as f64 * h
        };
        let g = build_grid(&GridSpec {
            axes: vec![
                AxisSpec::with_spacing(ext(mx, bx), h, bx.0, bx.1),
                AxisSpec::with_spacing(ext(my, by), h, by.0, by.1),
            ],
        })
        .unwrap();
        assert_eq!(g.counts(), vec![mx, my]);
        g
    }

    fn rel(a: &[f64], b: &DVector<f64>) -> f64 {
        max_diff(a, b) / max_abs(b).max(1e-300)
    }

    fn state(n: usize, seed: f64, t: f64, step: usize) -> FieldPair {
        FieldPair { phi: wavy(n, seed, 0.0, 1.0), c: wavy(n, seed + 1.3, 0.0, 1.0), t, step_index: step }
    }

    /// Test grids: a mixed-BC grid with unit Dirichlet data, and an all-Neumann one.
    fn cases() -> Vec<(&'static str, Grid, f64)> {
        use BcKind::{Dirichlet as D, Neumann as N};
        vec![("7x8 neumann/dirichlet", grid2(7, 8, (N, N), (D, D)), 1.0), ("8x6 neumann", grid2(8, 6, (N, N), (N, N)), 0.0)]
    }

    fn ctx_for(grid: &Grid, g: f64) -> RectContext {
        let b = if g == 0.0 { BoundaryData::homogeneous(2) } else { BoundaryData::uniform(2, g, g) };
        RectContext::new(grid.clone(), CorrosionParameters::default(), b).unwrap()
    }

    /// Matrix-form rectangular steps against dense vectorized updates.
    pub fn rect_errors() -> Vec<(String, f64)> {
        let p = CorrosionParameters::default();
        let mut out = Vec::new();
        for (name, grid, g) in cases() {
            let ctx = ctx_for(&grid, g);
            let facts = factorize_grid(&grid).unwrap();
            let n = grid.n_nodes();
            let m = grid_laplacian(&grid);
            let id = DMatrix::<f64>::identity(n, n);
            let psi_phi = psi(&grid, g);
            let psi_c = psi(&grid, g) + psi(&grid, if g == 0.0 { 0.0 } else { reaction_f2(g, &p) });

            let s0 = state(n, 0.2, 0.0, 0);
            let ops = RectOperators::new(&facts, &p, Order::Euler, DT, W).unwrap();
            let got = step_imex_euler_rect(&ctx, &ops, &s0).unwrap();
            let (phi0, c0) = (vec(&s0.phi), vec(&s0.c));
            let rhs = &phi0 + DT * (W * &phi0 + f1(&phi0, &c0, &p) + p.d_phi * &psi_phi);
            let phi1 = solve((1.0 + W * DT) * &id - DT * p.d_phi * &m, &rhs);
            let rhs = &c0 + DT * p.d_c * (&m * f2(&phi1, &p) + &psi_c);
            let c1 = solve(&id - DT * p.d_c * &m, &rhs);
            out.push((format!("rect euler {name}"), rel(&got.phi, &phi1).max(rel(&got.c, &c1))));

            let s1 = state(n, 0.9, DT, 1);
            let ops = RectOperators::new(&facts, &p, Order::TwoSbdf, DT, W).unwrap();
            let got = step_imex_2sbdf_rect(&ctx, &ops, &s0, &s1).unwrap();
            let (phi1, c1) = (vec(&s1.phi), vec(&s1.c));
            let rhs = 4.0 * &phi1 - &phi0
                + 2.0 * DT * (2.0 * f1(&phi1, &c1, &p) - f1(&phi0, &c0, &p) + W * (2.0 * &phi1 - &phi0))
                + 2.0 * DT * p.d_phi * &psi_phi;
            let phi2 = solve((3.0 + 2.0 * W * DT) * &id - 2.0 * DT * p.d_phi * &m, &rhs);
            let rhs = 4.0 * &c1 - &c0 + 2.0 * DT * p.d_c * (&m * f2(&phi2, &p) + &psi_c);
            let c2 = solve(3.0 * &id - 2.0 * DT * p.d_c * &m, &rhs);
            out.push((format!("rect 2sbdf {name}"), rel(&got.phi, &phi2).max(rel(&got.c, &c2))));
        }
        out
    }

    /// Configuration that stops every loop after its first iteration.
    pub fn one_iteration(variant: Variant, order: Order) -> IterSchemeConfig {
        let mut cfg = IterSchemeConfig::new(variant, order, DT, W);
        cfg.eps1 = 1e300;
        cfg.eps2 = 1e300;
        cfg
    }

    pub fn pit(grid: &Grid) -> DomainMask {
        let cx = grid.axes[0].coordinate(grid.axes[0].count / 2);
        let cy = grid.axes[1].coordinate(grid.axes[1].count / 2);
        rasterize_mask(grid, &[Shape::Circle { center: vec![cx, cy], radius: 1.5e-6 }]).unwrap()
    }

    /// One iteration of each iterative scheme against the dense map
    /// `(βI − αM)u¹ = r − α(N u⁰ + G v)`.
    pub fn holes_errors(use_cache: bool) -> Vec<(String, f64)> {
        let p = CorrosionParameters::default();
        let mut out = Vec::new();
        for (name, grid, g) in cases() {
            let ctx = ctx_for(&grid, g);
            let facts = factorize_grid(&grid).unwrap();
            let n = grid.n_nodes();
            let mask = pit(&grid);
            assert!(!mask.theta_nodes.is_empty());
            let m = grid_laplacian(&grid);
            let (n1, n2) = corrections(&m, &mask);
            let hat = &m - &n1 - &n2;
            let id = DMatrix::<f64>::identity(n, n);
            let psi_phi = psi(&grid, g);
            let psi_c = psi(&grid, g) + psi(&grid, if g == 0.0 { 0.0 } else { reaction_f2(g, &p) });
            let s0 = state(n, 0.4, 0.0, 0);
            let s1 = state(n, 1.7, DT, 1);
            let (phi0, c0, phi1, c1) = (vec(&s0.phi), vec(&s0.c), vec(&s1.phi), vec(&s1.c));
            for variant in [Variant::ImexI, Variant::ImexE] {
                let holes = HoleOperators::new(&ctx, mask.clone(), variant).unwrap();
                let (nn, gg) = match variant {
                    Variant::ImexI => (&n1 + &n2, DMatrix::zeros(n, n)),
                    Variant::ImexE => (n1.clone(), n2.clone()),
                };
                for order in [Order::Euler, Order::TwoSbdf] {
                    let cfg = one_iteration(variant, order);
                    let ops = IterOperators::new(&ctx, &facts, &holes, order, DT, W, use_cache).unwrap();
                    let (got, rep) = match order {
                        Order::Euler => step_iter_euler(&ctx, &holes, &ops, &cfg, &s0, 1.0).unwrap(),
                        Order::TwoSbdf => step_iter_2sbdf(&ctx, &holes, &ops, &cfg, &s0, &s1, 1.0).unwrap(),
                    };
                    assert_eq!((rep.k_phi, rep.k_c), (1, 1));
                    let (phi_new, c_new) = match order {
                        Order::Euler => {
                            let (a, b) = (DT * p.d_phi, 1.0 + W * DT);
                            let rhs = &phi0 + DT * (W * &phi0 + f1(&phi0, &c0, &p) + p.d_phi * &psi_phi)
                                - a * (&nn * &phi0 + &gg * &phi0);
                            let phi = solve(b * &id - a * &m, &rhs);
                            let a = DT * p.d_c;
                            let rhs = &c0 + a * (&hat * f2(&phi, &p) + &psi_c) - a * (&nn * &c0 + &gg * &c0);
                            let c = solve(&id - a * &m, &rhs);
                            (phi, c)
                        }
                        Order::TwoSbdf => {
                            let (a, b) = (2.0 * DT * p.d_phi, 3.0 + 2.0 * W * DT);
                            let ex = 2.0 * &phi1 - &phi0;
                            let rhs = 4.0 * &phi1 - &phi0
                                + 2.0 * DT * (2.0 * f1(&phi1, &c1, &p) - f1(&phi0, &c0, &p) + W * &ex)
                                + a * &psi_phi
                                - a * (&nn * &phi1 + &gg * &ex);
                            let phi = solve(b * &id - a * &m, &rhs);
                            let a = 2.0 * DT * p.d_c;
                            let ex = 2.0 * &c1 - &c0;
                            let rhs = 4.0 * &c1 - &c0 + a * (&hat * f2(&phi, &p) + &psi_c) - a * (&nn * &c1 + &gg * &ex);
                            let c = solve(3.0 * &id - a * &m, &rhs);
                            (phi, c)
                        }
                    };
                    out.push((format!("{variant} {order} {name}"), rel(&got.phi, &phi_new).max(rel(&got.c, &c_new))));
                }
            }
        }
        out
    }

    /// Dense Kronecker solve of `(aI + bM)x = g`.
    pub fn kron_solve(a: f64, b: f64, axes: &[DMatrix<f64>], g: &[f64]) -> DVector<f64> {
        let m = kron_sum(axes);
        let n = m.nrows();
        solve(a * DMatrix::identity(n, n) + b * m, &vec(g))
    }

    /// Relative max-norm errors of random 2D Sylvester solves (and 3D ones
    /// on 3×4×5 grids).
    pub fn sylvester_errors(count: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kind = |r: &mut ChaCha8Rng| if r.random_bool(0.5) { BcKind::Dirichlet } else { BcKind::Neumann };
        let mut e2 = Vec::new();
        for _ in 0..count {
            let mx = rng.random_range(2..=8);
            let my = rng.random_range(2..=8);
            let (kx, ky) = ((kind(&mut rng), kind(&mut rng)), (kind(&mut rng), kind(&mut rng)));
            let (dx, dy) = (rng.random_range(0.2..2.0), rng.random_range(0.2..2.0));
            // the schemes' pattern: a ≥ 1 and b = −αD < 0
            let a = rng.random_range(1.0..5.0);
            let b = -rng.random_range(1e-3..3.0);
            let lx = laplacian_1d(kx.0, kx.1, mx, dx).unwrap();
            let ly = laplacian_1d(ky.0, ky.1, my, dy).unwrap();
            let facts = vec![Arc::new(spectral_factorize(&lx).unwrap()), Arc::new(spectral_factorize(&ly).unwrap())];
            let g: Vec<f64> = (0..mx * my).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = ShiftedSolver::new(a, b, &facts).unwrap().solve(&g).unwrap();
            let want = kron_solve(a, b, &[lap1d(kx.0, kx.1, mx, dx), lap1d(ky.0, ky.1, my, dy)], &g);
            e2.push(rel(&x, &want));
        }
        let mut e3 = Vec::new();
        for _ in 0..4 {
            let ks: Vec<(BcKind, BcKind)> = (0..3).map(|_| (kind(&mut rng), kind(&mut rng))).collect();
            let dims = [3, 4, 5];
            let dr: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..1.5)).collect();
            let a = rng.random_range(1.0..5.0);
            let b = -rng.random_range(1e-3..3.0);
            let lap: Vec<_> = (0..3).map(|r| laplacian_1d(ks[r].0, ks[r].1, dims[r], dr[r]).unwrap()).collect();
            let g: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = solve_3d(a, b, &lap[0], &lap[1], &lap[2], &g).unwrap();
            let dense: Vec<_> = (0..3).map(|r| lap1d(ks[r].0, ks[r].1, dims[r], dr[r])).collect();
            e3.push(rel(&x, &kron_solve(a, b, &dense, &g)));
        }
        (e2, e3)
    }
}
