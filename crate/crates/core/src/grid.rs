//! Structured grids, hole masks and the sparse correction operators of the
//! extended-domain formulation.
//!
//! Nodes sit at `i·Δr`. An axis of length `L` with `m` interior nodes has
//! `Δr = L/(m+1)`; a Neumann end adds its boundary node to the unknowns.
//! Flat indices are x-fastest: `p = i + mx·(j + my·k)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{laplacian_1d, BcKind, Laplacian1D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    /// Axis length [m].
    pub extent: f64,
    /// Interior node count `m`, so that `Δr = extent/(m+1)`.
    pub interior: usize,
    pub low: BcKind,
    pub high: BcKind,
}

impl AxisSpec {
    /// Axis with spacing as close as possible to `h`.
    pub fn with_spacing(extent: f64, h: f64, low: BcKind, high: BcKind) -> Self {
        let cells = (extent / h).round().max(1.0) as usize;
        Self { extent, interior: cells.saturating_sub(1), low, high }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<AxisSpec>,
}

/// One axis of a built grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub spec: AxisSpec,
    pub dr: f64,
    /// Number of unknowns along the axis.
    pub count: usize,
    /// Lattice index of the first unknown (0 with a Neumann low end).
    pub first: usize,
}

impl Axis {
    pub fn coordinate(&self, i: usize) -> f64 {
        (self.first + i) as f64 * self.dr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub axes: Vec<Axis>,
    pub laplacians: Vec<Laplacian1D>,
}

pub fn build_grid(spec: &GridSpec) -> Result<Grid> {
    if !(2..=3).contains(&spec.axes.len()) {
        return Err(Error::Config(format!("grid must have 2 or 3 axes, got {}", spec.axes.len())));
    }
    let mut axes = Vec::new();
    let mut laplacians = Vec::new();
    for (r, a) in spec.axes.iter().enumerate() {
        if !(a.extent > 0.0 && a.extent.is_finite()) {
            return Err(Error::Config(format!("axis {r}: extent must be positive, got {}", a.extent)));
        }
        if a.interior == 0 {
            return Err(Error::Config(format!("axis {r}: interior count must be positive")));
        }
        let dr = a.extent / (a.interior + 1) as f64;
        let extra = (a.low == BcKind::Neumann) as usize + (a.high == BcKind::Neumann) as usize;
        let count = a.interior + extra;
        if count < 2 {
            return Err(Error::Config(format!("axis {r}: at least 2 unknowns required, got {count}")));
        }
        let first = if a.low == BcKind::Neumann { 0 } else { 1 };
        laplacians.push(laplacian_1d(a.low, a.high, count, dr)?);
        axes.push(Axis { spec: *a, dr, count, first });
    }
    Ok(Grid { axes, laplacians })
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Unknown counts padded to three axes (`mz = 1` in 2D).
    pub fn dims3(&self) -> [usize; 3] {
        let mut d = [1; 3];
        for (r, a) in self.axes.iter().enumerate() {
            d[r] = a.count;
        }
        d
    }

    pub fn counts(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.count).collect()
    }

    pub fn spacings(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a.dr).collect()
    }

    pub fn n_nodes(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let [mx, my, _] = self.dims3();
        i + mx * (j + my * k)
    }

    pub fn multi_index(&self, p: usize) -> [usize; 3] {
        let [mx, my, _] = self.dims3();
        [p % mx, (p / mx) % my, p / (mx * my)]
    }

    /// Node coordinates (z = 0 in 2D).
    pub fn coords(&self, p: usize) -> [f64; 3] {
        let idx = self.multi_index(p);
        let mut c = [0.0; 3];
        for (r, a) in self.axes.iter().enumerate() {
            c[r] = a.coordinate(idx[r]);
        }
        c
    }

    /// Stencil row of the Kronecker-sum Laplacian at node `p`, as
    /// `(column, value)` pairs with the diagonal first.
    pub fn stencil(&self, p: usize) -> Vec<(usize, f64)> {
        let idx = self.multi_index(p);
        let mut out = vec![(p, 0.0)];
        let mut stride = 1;
        for (r, lap) in self.laplacians.iter().enumerate() {
            let i = idx[r];
            out[0].1 += lap.diag[i];
            if i > 0 {
                out.push((p - stride, lap.sub[i - 1]));
            }
            if i + 1 < lap.m {
                out.push((p + stride, lap.sup[i]));
            }
            stride *= lap.m;
        }
        out
    }

    /// Smallest spacing.
    pub fn h_min(&self) -> f64 {
        self.axes.iter().map(|a| a.dr).fold(f64::INFINITY, f64::min)
    }
}

/// Hole geometry primitives (SI units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    /// Open disk in 2D, open ball in 3D.
    Circle { center: Vec<f64>, radius: f64 },
    /// Open cylinder of given radius whose axis runs parallel to coordinate
    /// axis `axis`, starting at `start` and extending by `length`.
    CylinderSegment { start: [f64; 3], axis: usize, radius: f64, length: f64 },
    /// Everything at or above a piecewise-linear height profile
    /// `y = base + amplitude·u_k` with knots every `wavelength` along x and
    /// `u_k` uniform in [−1, 1] drawn from `seed`.
    RoughEdge { base: f64, amplitude: f64, wavelength: f64, seed: u64 },
}

impl Shape {
    /// Knot heights of a rough edge profile over `[0, lx]`.
    pub fn rough_knots(base: f64, amplitude: f64, wavelength: f64, seed: u64, lx: f64) -> Vec<f64> {
        let n = (lx / wavelength).ceil() as usize + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| base + amplitude * (2.0 * rng.random::<f64>() - 1.0)).collect()
    }

    fn rough_profile(knots: &[f64], wavelength: f64, x: f64) -> f64 {
        let s = (x / wavelength).max(0.0);
        let k = (s.floor() as usize).min(knots.len() - 2);
        let t = s - k as f64;
        knots[k] * (1.0 - t) + knots[k + 1] * t
    }

    fn membership(&self, grid: &Grid) -> Result<Vec<bool>> {
        let n = grid.n_nodes();
        let tol = 1e-9 * grid.h_min();
        let mut inside = vec![false; n];
        match self {
            Shape::Circle { center, radius } => {
                if center.len() != grid.dim() {
                    return Err(Error::Geometry(format!(
                        "circle center has {} coordinates on a {}D grid",
                        center.len(),
                        grid.dim()
                    )));
                }
                if !(*radius > 0.0) {
                    return Err(Error::Geometry("circle radius must be positive".into()));
                }
                let r = radius - tol;
                for (p, v) in inside.iter_mut().enumerate() {
                    let x = grid.coords(p);
                    let d2: f64 = center.iter().enumerate().map(|(a, c)| (x[a] - c).powi(2)).sum();
                    *v = d2 < r * r;
                }
            }
            Shape::CylinderSegment { start, axis, radius, length } => {
                if grid.dim() != 3 || *axis > 2 {
                    return Err(Error::Geometry("cylinder segments need a 3D grid and axis in 0..3".into()));
                }
                if !(*radius > 0.0 && *length > 0.0) {
                    return Err(Error::Geometry("cylinder radius and length must be positive".into()));
                }
                let r = radius - tol;
                for (p, v) in inside.iter_mut().enumerate() {
                    let x = grid.coords(p);
                    let s = x[*axis] - start[*axis];
                    if s < -tol || s > length + tol {
                        continue;
                    }
                    let d2: f64 = (0..3).filter(|&a| a != *axis).map(|a| (x[a] - start[a]).powi(2)).sum();
                    *v = d2 < r * r;
                }
            }
            Shape::RoughEdge { base, amplitude, wavelength, seed } => {
                if grid.dim() != 2 {
                    return Err(Error::Geometry("rough edges are defined on 2D grids".into()));
                }
                if !(*wavelength > 0.0) {
                    return Err(Error::Geometry("rough edge wavelength must be positive".into()));
                }
                let knots = Self::rough_knots(*base, *amplitude, *wavelength, *seed, grid.axes[0].spec.extent);
                for (p, v) in inside.iter_mut().enumerate() {
                    let x = grid.coords(p);
                    *v = x[1] >= Self::rough_profile(&knots, *wavelength, x[0]) - tol;
                }
            }
        }
        if !inside.iter().any(|&b| b) {
            return Err(Error::Geometry(format!("shape {self:?} covers no grid node")));
        }
        Ok(inside)
    }
}

/// Node indicator of the hole set Θ with boundary classification caches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainMask {
    pub theta: Vec<bool>,
    /// Θ nodes, ascending.
    pub theta_nodes: Vec<usize>,
    /// Θ nodes with at least one stencil neighbor in Ω̂.
    pub theta_boundary: Vec<usize>,
    /// Ω̂ nodes with at least one stencil neighbor in Θ.
    pub omega_boundary: Vec<usize>,
}

impl DomainMask {
    pub fn from_indicator(grid: &Grid, theta: Vec<bool>) -> Result<Self> {
        if theta.len() != grid.n_nodes() {
            return Err(Error::Dimension("mask length differs from node count".into()));
        }
        let mut theta_nodes = Vec::new();
        let mut theta_boundary = Vec::new();
        let mut omega_boundary = Vec::new();
        for p in 0..theta.len() {
            let st = grid.stencil(p);
            let mixed = st[1..].iter().any(|&(q, _)| theta[q] != theta[p]);
            if theta[p] {
                theta_nodes.push(p);
                if mixed {
                    theta_boundary.push(p);
                }
            } else if mixed {
                omega_boundary.push(p);
            }
        }
        Ok(Self { theta, theta_nodes, theta_boundary, omega_boundary })
    }

    pub fn empty(grid: &Grid) -> Self {
        Self {
            theta: vec![false; grid.n_nodes()],
            theta_nodes: Vec::new(),
            theta_boundary: Vec::new(),
            omega_boundary: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.theta_nodes.is_empty()
    }

    /// Indicator of Ω̂ as 0/1 values.
    pub fn chi_omega(&self) -> Vec<f64> {
        self.theta.iter().map(|&t| if t { 0.0 } else { 1.0 }).collect()
    }
}

/// Marks every node inside the closed union of `shapes` as a hole node.
pub fn rasterize_mask(grid: &Grid, shapes: &[Shape]) -> Result<DomainMask> {
    let mut theta = vec![false; grid.n_nodes()];
    for s in shapes {
        for (t, i) in theta.iter_mut().zip(s.membership(grid)?) {
            *t |= i;
        }
    }
    DomainMask::from_indicator(grid, theta)
}

/// Square sparse matrix in compressed-row form storing only non-empty rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseMatrix {
    pub n: usize,
    pub rows: Vec<usize>,
    pub ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, rows: Vec::new(), ptr: vec![0], cols: Vec::new(), vals: Vec::new() }
    }

    /// Builds from per-row entry lists (rows ascending, empty rows skipped).
    pub fn from_rows(n: usize, rows: Vec<(usize, Vec<(usize, f64)>)>) -> Self {
        let mut m = Self::zeros(n);
        for (r, entries) in rows {
            let entries: Vec<_> = entries.into_iter().filter(|e| e.1 != 0.0).collect();
            if entries.is_empty() {
                continue;
            }
            m.rows.push(r);
            for (c, v) in entries {
                m.cols.push(c);
                m.vals.push(v);
            }
            m.ptr.push(m.cols.len());
        }
        m
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn is_zero(&self) -> bool {
        self.vals.iter().all(|&v| v == 0.0)
    }

    pub fn row_entries(&self, k: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.ptr[k]..self.ptr[k + 1]).map(move |e| (self.cols[e], self.vals[e]))
    }

    /// `out[row] += alpha·(N x)[row]` for every stored row.
    pub fn mul_add(&self, alpha: f64, x: &[f64], out: &mut [f64]) {
        for (k, &r) in self.rows.iter().enumerate() {
            let mut acc = 0.0;
            for e in self.ptr[k]..self.ptr[k + 1] {
                acc += self.vals[e] * x[self.cols[e]];
            }
            out[r] += alpha * acc;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.mul_add(1.0, x, &mut out);
        out
    }

    pub fn to_dense(&self) -> ndarray::Array2<f64> {
        let mut d = ndarray::Array2::zeros((self.n, self.n));
        for (k, &r) in self.rows.iter().enumerate() {
            for (c, v) in self.row_entries(k) {
                d[[r, c]] += v;
            }
        }
        d
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut acc: std::collections::BTreeMap<usize, std::collections::BTreeMap<usize, f64>> = Default::default();
        for m in [self, other] {
            for (k, &r) in m.rows.iter().enumerate() {
                for (c, v) in m.row_entries(k) {
                    *acc.entry(r).or_default().entry(c).or_default() += v;
                }
            }
        }
        Self::from_rows(self.n, acc.into_iter().map(|(r, row)| (r, row.into_iter().collect())).collect())
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let pos: std::collections::HashMap<usize, usize> =
            other.rows.iter().enumerate().map(|(k, &r)| (r, k)).collect();
        let mut rows = Vec::new();
        for (k, &r) in self.rows.iter().enumerate() {
            let mut acc: std::collections::BTreeMap<usize, f64> = Default::default();
            for (c, v) in self.row_entries(k) {
                if let Some(&k2) = pos.get(&c) {
                    for (c2, v2) in other.row_entries(k2) {
                        *acc.entry(c2).or_default() += v * v2;
                    }
                }
            }
            rows.push((r, acc.into_iter().collect()));
        }
        Self::from_rows(self.n, rows)
    }

    /// Distinct column indices, ascending.
    pub fn column_support(&self) -> Vec<usize> {
        let mut c = self.cols.clone();
        c.sort_unstable();
        c.dedup();
        c
    }
}

/// The sparse corrections with `Δ̂ = M − N1 − N2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionOperators {
    /// Stencil couplings of Θ rows to Ω̂ columns.
    pub n1: SparseMatrix,
    /// Stencil couplings of every row to Θ columns (diagonal included).
    pub n2: SparseMatrix,
}

impl CorrectionOperators {
    pub fn sum(&self) -> SparseMatrix {
        self.n1.add(&self.n2)
    }
}

pub fn build_correction_matrices(grid: &Grid, mask: &DomainMask) -> Result<CorrectionOperators> {
    let n = grid.n_nodes();
    if mask.theta.len() != n {
        return Err(Error::Dimension("mask does not match grid".into()));
    }
    let theta = &mask.theta;
    let mut rows1 = Vec::new();
    let mut rows2 = Vec::new();
    // only Θ nodes and their neighbors carry entries
    let mut touched: Vec<usize> = mask.theta_nodes.clone();
    touched.extend_from_slice(&mask.omega_boundary);
    touched.sort_unstable();
    for p in touched {
        let st = grid.stencil(p);
        if theta[p] {
            rows1.push((p, st.iter().copied().filter(|&(q, _)| !theta[q]).collect::<Vec<_>>()));
        }
        let mut r2: Vec<_> = st.into_iter().filter(|&(q, _)| theta[q]).collect();
        r2.sort_by_key(|e| e.0);
        rows2.push((p, r2));
    }
    for r in rows1.iter_mut() {
        r.1.sort_by_key(|e| e.0);
    }
    Ok(CorrectionOperators { n1: SparseMatrix::from_rows(n, rows1), n2: SparseMatrix::from_rows(n, rows2) })
}

/// Exact `(‖N‖₁, ‖N‖∞)`.
pub fn mask_norm_bounds(m: &SparseMatrix) -> (f64, f64) {
    let mut col = std::collections::HashMap::<usize, f64>::new();
    let mut inf: f64 = 0.0;
    for k in 0..m.rows.len() {
        let mut rs = 0.0;
        for (c, v) in m.row_entries(k) {
            rs += v.abs();
            *col.entry(c).or_default() += v.abs();
        }
        inf = inf.max(rs);
    }
    (col.values().copied().fold(0.0, f64::max), inf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planar(lx: f64, mx: usize, ly: f64, my: usize, bx: BcKind, by: BcKind) -> Grid {
        build_grid(&GridSpec {
            axes: vec![
                AxisSpec { extent: lx, interior: mx, low: bx, high: bx },
                AxisSpec { extent: ly, interior: my, low: by, high: by },
            ],
        })
        .unwrap()
    }

    #[test]
    fn small_dirichlet_grid() {
        let g = planar(3.0, 2, 3.0, 2, BcKind::Dirichlet, BcKind::Dirichlet);
        assert_eq!(g.counts(), vec![2, 2]);
        assert_eq!(g.spacings(), vec![1.0, 1.0]);
        let pts: Vec<_> = (0..4).map(|p| g.coords(p)).collect();
        assert_eq!(pts, vec![[1.0, 1.0, 0.0], [2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [2.0, 2.0, 0.0]]);
    }

    #[test]
    fn pencil_counts() {
        let g = build_grid(&GridSpec {
            axes: vec![
                AxisSpec::with_spacing(25e-6, 1e-6, BcKind::Neumann, BcKind::Neumann),
                AxisSpec::with_spacing(300e-6, 1e-6, BcKind::Dirichlet, BcKind::Dirichlet),
            ],
        })
        .unwrap();
        // 24 interior nodes plus both boundary nodes along x
        assert_eq!(g.counts(), vec![26, 299]);
        assert_eq!(g.axes[0].coordinate(0), 0.0);
        assert!((g.axes[0].coordinate(25) - 25e-6).abs() < 1e-18);
        assert!((g.axes[1].coordinate(0) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn mixed_axis_augments_one_end() {
        let g = build_grid(&GridSpec {
            axes: vec![
                AxisSpec { extent: 4.0, interior: 3, low: BcKind::Neumann, high: BcKind::Dirichlet },
                AxisSpec { extent: 3.0, interior: 2, low: BcKind::Dirichlet, high: BcKind::Dirichlet },
            ],
        })
        .unwrap();
        assert_eq!(g.counts(), vec![4, 2]);
        let want = [[-2.0, 2.0, 0.0, 0.0], [1.0, -2.0, 1.0, 0.0], [0.0, 1.0, -2.0, 1.0], [0.0, 0.0, 1.0, -2.0]];
        let d = g.laplacians[0].to_dense();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(d[[i, j]], want[i][j]);
            }
        }
        assert_eq!(g.axes[0].coordinate(0), 0.0);
        assert_eq!(g.axes[0].coordinate(3), 3.0);
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = GridSpec {
            axes: vec![
                AxisSpec { extent: -1.0, interior: 3, low: BcKind::Dirichlet, high: BcKind::Dirichlet },
                AxisSpec { extent: 1.0, interior: 3, low: BcKind::Dirichlet, high: BcKind::Dirichlet },
            ],
        };
        assert!(build_grid(&bad).is_err());
        let bad = GridSpec {
            axes: vec![
                AxisSpec { extent: 1.0, interior: 1, low: BcKind::Dirichlet, high: BcKind::Dirichlet },
                AxisSpec { extent: 1.0, interior: 3, low: BcKind::Dirichlet, high: BcKind::Dirichlet },
            ],
        };
        assert!(build_grid(&bad).is_err());
    }

    #[test]
    fn circle_radius_two_has_nine_nodes() {
        let g = planar(200e-6, 199, 200e-6, 199, BcKind::Dirichlet, BcKind::Dirichlet);
        let m = rasterize_mask(&g, &[Shape::Circle { center: vec![100e-6, 100e-6], radius: 2e-6 }]).unwrap();
        assert_eq!(m.theta_nodes.len(), 9);
        // brute-force lattice count of the open disk
        let mut count = 0;
        for dx in -3i32..=3 {
            for dy in -3i32..=3 {
                if dx * dx + dy * dy < 4 {
                    count += 1;
                }
            }
        }
        assert_eq!(count, 9);
        // a 3×3 block: everything but the center touches Ω̂
        assert_eq!(m.theta_boundary.len(), 8);
    }

    #[test]
    fn tiny_circle_between_nodes_is_rejected() {
        let g = planar(10.0, 9, 10.0, 9, BcKind::Dirichlet, BcKind::Dirichlet);
        let r = rasterize_mask(&g, &[Shape::Circle { center: vec![4.5, 4.5], radius: 0.4 }]);
        assert!(matches!(r, Err(Error::Geometry(_))));
    }

    #[test]
    fn rough_edge_matches_reference_rasterization() {
        let g = planar(10.0, 9, 10.0, 9, BcKind::Dirichlet, BcKind::Dirichlet);
        let shape = Shape::RoughEdge { base: 7.0, amplitude: 1.5, wavelength: 2.5, seed: 11 };
        let m = rasterize_mask(&g, &[shape]).unwrap();
        let knots = Shape::rough_knots(7.0, 1.5, 2.5, 11, 10.0);
        for j in 1..=9 {
            for i in 1..=9 {
                let x = i as f64;
                let seg = ((x / 2.5) as usize).min(knots.len() - 2);
                let t = x / 2.5 - seg as f64;
                let y_prof = knots[seg] + t * (knots[seg + 1] - knots[seg]);
                let p = (i - 1) + 9 * (j - 1);
                assert_eq!(m.theta[p], j as f64 >= y_prof - 1e-9, "node ({i},{j})");
            }
        }
        assert_eq!(m, rasterize_mask(&g, &[shape_again()]).unwrap());

        fn shape_again() -> Shape {
            Shape::RoughEdge { base: 7.0, amplitude: 1.5, wavelength: 2.5, seed: 11 }
        }
    }

    #[test]
    fn single_node_correction_rows() {
        let g = planar(6.0, 5, 6.0, 5, BcKind::Dirichlet, BcKind::Dirichlet);
        let c = g.index(2, 2, 0);
        let mut theta = vec![false; 25];
        theta[c] = true;
        let m = DomainMask::from_indicator(&g, theta).unwrap();
        let ops = build_correction_matrices(&g, &m).unwrap();
        let n1 = ops.n1.to_dense();
        let n2 = ops.n2.to_dense();
        for q in [c - 1, c + 1, c - 5, c + 5] {
            assert_eq!(n1[[c, q]], 1.0);
            assert_eq!(n2[[q, c]], 1.0);
        }
        assert_eq!(n1[[c, c]], 0.0);
        assert_eq!(n2[[c, c]], -4.0);
        assert_eq!(ops.n1.nnz(), 4);
        assert_eq!(ops.n2.nnz(), 5);
        let full = crate::spectral::kronecker_sum_dense(&g.laplacians);
        let hat = &(&full - &n1) - &n2;
        for q in 0..25 {
            assert_eq!(hat[[c, q]], 0.0);
            assert_eq!(hat[[q, c]], 0.0);
        }
    }

    #[test]
    fn empty_mask_has_zero_corrections() {
        let g = planar(6.0, 5, 6.0, 5, BcKind::Neumann, BcKind::Dirichlet);
        let ops = build_correction_matrices(&g, &DomainMask::empty(&g)).unwrap();
        assert!(ops.n1.is_zero() && ops.n2.is_zero());
        assert_eq!(mask_norm_bounds(&ops.n1), (0.0, 0.0));
    }

    #[test]
    fn circle_norms_respect_bounds() {
        let h = 1e-6;
        let g = planar(200e-6, 199, 100e-6, 99, BcKind::Neumann, BcKind::Neumann);
        let m = rasterize_mask(&g, &[Shape::Circle { center: vec![100e-6, 50e-6], radius: 2e-6 }]).unwrap();
        let ops = build_correction_matrices(&g, &m).unwrap();
        let (n1, ninf) = mask_norm_bounds(&ops.n1);
        assert!(ninf <= 3.0 / (h * h) * (1.0 + 1e-12));
        assert!(n1 <= 2.0 / (h * h) * (1.0 + 1e-12));
        let s = 4.0 * 2.0 / (h * h) * (1.0 + 1e-12);
        let (a, b) = mask_norm_bounds(&ops.sum());
        assert!(a <= s && b <= s);
        assert!(ops.n1.matmul(&ops.n1).is_zero());
    }

    #[test]
    fn cylinder_segment_in_3d() {
        let g = build_grid(&GridSpec {
            axes: vec![
                AxisSpec::with_spacing(10.0, 1.0, BcKind::Neumann, BcKind::Neumann),
                AxisSpec::with_spacing(4.0, 1.0, BcKind::Neumann, BcKind::Neumann),
                AxisSpec::with_spacing(6.0, 1.0, BcKind::Neumann, BcKind::Neumann),
            ],
        })
        .unwrap();
        let m = rasterize_mask(
            &g,
            &[Shape::CylinderSegment { start: [5.0, 0.0, 6.0], axis: 1, radius: 2.0, length: 4.0 }],
        )
        .unwrap();
        // open half disk of radius 2 (6 lattice points) on each of the 5 y-planes
        assert_eq!(m.theta_nodes.len(), 30);
    }
}
