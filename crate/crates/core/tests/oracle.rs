mod common;

use common::oracle::{grid2, holes_errors, one_iteration, pit, rect_errors, sylvester_errors, DT, W};
use common::*;
use corrosim::holes::{step_iter_euler, HoleOperators, IterOperators, Variant};
use corrosim::model::CorrosionParameters;
use corrosim::rect::{factorize_grid, BoundaryData, FieldPair, Order, RectContext};
use corrosim::spectral::BcKind;
use nalgebra::DMatrix;

#[test]
fn sylvester_solves_match_kronecker_systems() {
    let (e2, e3) = sylvester_errors(30, 11);
    for e in e2.iter().chain(&e3) {
        assert!(*e <= 1e-10, "{e}");
    }
}

#[test]
fn rect_steps_match_vector_form() {
    for (name, e) in rect_errors() {
        assert!(e <= 1e-10, "{name}: {e}");
    }
}

#[test]
fn iteration_maps_match_vector_form() {
    for (name, e) in holes_errors(false) {
        assert!(e <= 1e-10, "{name}: {e}");
    }
}

#[test]
fn cached_iteration_maps_match_vector_form() {
    for (name, e) in holes_errors(true) {
        assert!(e <= 1e-10, "{name}: {e}");
    }
}

#[test]
fn converged_imex_i_solves_the_decoupled_system() {
    // the fixed point of the IMEX-I iteration solves (βI − αΔ̂)u = r
    use BcKind::Neumann as N;
    let grid = grid2(8, 8, (N, N), (N, N));
    let p = CorrosionParameters::default();
    let ctx = RectContext::new(grid.clone(), p, BoundaryData::homogeneous(2)).unwrap();
    let mask = pit(&grid);
    let n = grid.n_nodes();
    let mut s0 = FieldPair { phi: wavy(n, 0.3, 0.2, 1.0), c: wavy(n, 2.0, 0.1, 1.0), t: 0.0, step_index: 0 };
    for &q in &mask.theta_nodes {
        s0.phi[q] = 0.0;
        s0.c[q] = 0.0;
    }
    let holes = HoleOperators::new(&ctx, mask.clone(), Variant::ImexI).unwrap();
    let facts = factorize_grid(&grid).unwrap();
    let ops = IterOperators::new(&ctx, &facts, &holes, Order::Euler, DT, W, false).unwrap();
    let mut cfg = one_iteration(Variant::ImexI, Order::Euler);
    cfg.eps1 = 1e-15;
    cfg.eps2 = 1e-300;
    cfg.eps3 = 1e-15;
    let (got, rep) = step_iter_euler(&ctx, &holes, &ops, &cfg, &s0, 1.0).unwrap();
    assert!(rep.k_phi > 1);

    let m = grid_laplacian(&grid);
    let (n1, n2) = corrections(&m, &mask);
    let hat = &m - &n1 - &n2;
    let id = DMatrix::<f64>::identity(n, n);
    let (phi0, c0) = (vec(&s0.phi), vec(&s0.c));
    let rhs = &phi0 + DT * (W * &phi0 + f1(&phi0, &c0, &p));
    let phi = solve((1.0 + W * DT) * &id - DT * p.d_phi * &hat, &rhs);
    let rhs = &c0 + DT * p.d_c * (&hat * f2(&phi, &p));
    let c = solve(&id - DT * p.d_c * &hat, &rhs);
    assert!(max_diff(&got.phi, &phi) < 1e-12, "{}", max_diff(&got.phi, &phi));
    assert!(max_diff(&got.c, &c) < 1e-12, "{}", max_diff(&got.c, &c));
    for &q in &mask.theta_nodes {
        assert!(got.phi[q].abs() < 1e-12 && got.c[q].abs() < 1e-12);
    }
}

#[test]
fn iterations_contract_within_the_bound() {
    // 10x10 grid with a single hole node
    use corrosim::analysis::{actual_spectral_radius, bound_spectral_radius, BoundQuery, Equation};
    use corrosim::grid::DomainMask;
    use BcKind::Neumann as N;
    let grid = grid2(10, 10, (N, N), (N, N));
    let p = CorrosionParameters::default();
    let mut theta = vec![false; grid.n_nodes()];
    theta[grid.index(5, 5, 0)] = true;
    let mask = DomainMask::from_indicator(&grid, theta).unwrap();
    let ctx = RectContext::new(grid.clone(), p, BoundaryData::homogeneous(2)).unwrap();
    let facts = factorize_grid(&grid).unwrap();
    let dt = 1e-5;
    for variant in [Variant::ImexI, Variant::ImexE] {
        let holes = HoleOperators::new(&ctx, mask.clone(), variant).unwrap();
        let radius = actual_spectral_radius(dt * p.d_c, 1.0, &facts, &holes.n).unwrap().radius;
        let q = BoundQuery::new(variant, Order::Euler, N, Equation::C, 1e-6, dt);
        let bound = bound_spectral_radius(&q).value().unwrap();
        assert!(radius <= bound + 1e-6, "{variant}: {radius} > {bound}");

        // geometric contraction at rate ≤ bound caps the iterations to
        // reach a tolerance from an O(1) start
        let ops = IterOperators::new(&ctx, &facts, &holes, Order::Euler, dt, W, false).unwrap();
        let n = grid.n_nodes();
        let s0 = FieldPair { phi: vec![0.0; n], c: wavy(n, 0.7, 0.0, 1.0), t: 0.0, step_index: 0 };
        let mut cfg = one_iteration(variant, Order::Euler);
        cfg.eps1 = 1e-13;
        cfg.eps2 = 1e-300;
        cfg.eps3 = 1e-13;
        let (_, rep) = step_iter_euler(&ctx, &holes, &ops, &cfg, &s0, 1.0).unwrap();
        let cap = (1e-13f64.ln() / bound.ln()).ceil() as usize + 3;
        assert!(rep.k_c <= cap, "{variant}: {} iterations, cap {cap}", rep.k_c);
    }
}
