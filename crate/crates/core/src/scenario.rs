//! Scenario files, the builtin experiments and the run driver.
//!
//! Scenario files are TOML. Lengths are in micrometres, times in seconds and
//! model parameters in SI units. A minimal file:
//!
//! ```toml
//! name = "pit"
//! horizon = 10.0
//! snapshot_times = [5.0, 10.0]
//!
//! [grid]
//! extent = [200.0, 100.0]
//! h = 1.0
//! bc = [["neumann", "neumann"], ["neumann", "neumann"]]
//!
//! [[geometry]]
//! type = "circle"
//! center = [100.0, 50.0]
//! radius = 2.0
//!
//! [scheme]
//! variant = "imex_e"
//! order = "euler"
//! dt = 2e-3
//! ```
//!
//! Without geometry the rectangular steppers are used and `variant` is
//! ignored.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::{error_norms, front_position, loglog_fit, End, LinearFit};
use crate::error::{Error, Result};
use crate::export::{export_snapshot, write_iteration_log, write_series, SnapshotFormat};
use crate::grid::{build_grid, rasterize_mask, AxisSpec, DomainMask, Grid, GridSpec, Shape};
use crate::holes::{run_holes, HoleRunOptions, IterSchemeConfig, IterationReport, StopMode, Variant};
use crate::model::{estimate_relaxation_w, CorrosionParameters, RelaxationPolicy};
use crate::rect::{run_rect, BootstrapRule, BoundaryData, FieldPair, Order, RectContext, RunStats, SchemeConfig};
use crate::spectral::BcKind;

const UM: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Domain extent per axis [μm].
    pub extent: Vec<f64>,
    /// Node spacing [μm], shared by all axes.
    pub h: f64,
    /// `(low, high)` boundary kind per axis.
    pub bc: Vec<(BcKind, BcKind)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub phi: f64,
    pub c: f64,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self { phi: 1.0, c: 1.0 }
    }
}

/// Constant values on every Dirichlet end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    pub phi: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    pub order: Order,
    pub dt: f64,
    /// Relaxation parameter; chosen by the default policy when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps3: Option<f64>,
    #[serde(default)]
    pub stop_mode: StopMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub bootstrap: BootstrapRule,
}

impl SchemeSection {
    pub fn new(variant: Option<Variant>, order: Order, dt: f64) -> Self {
        Self {
            variant,
            order,
            dt,
            w: None,
            eps1: None,
            eps2: None,
            eps3: None,
            stop_mode: StopMode::FullCriteria,
            max_iters: None,
            bootstrap: BootstrapRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Relative paths resolve against the output root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub format: SnapshotFormat,
    #[serde(default = "yes")]
    pub iteration_log: bool,
    /// Axis along which the corrosion front is tracked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub front_axis: Option<usize>,
    #[serde(default = "low")]
    pub front_from: End,
}

fn yes() -> bool {
    true
}
fn low() -> End {
    End::Low
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: None, format: SnapshotFormat::Csv, iteration_log: true, front_axis: None, front_from: End::Low }
    }
}

/// Fine-step self reference used for error tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    #[serde(default = "one")]
    pub dt_divisor: usize,
    #[serde(default = "one")]
    pub h_divisor: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub grid: GridSection,
    /// Hole primitives in μm.
    #[serde(default)]
    pub geometry: Vec<Shape>,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub boundary: BoundarySection,
    #[serde(default)]
    pub params: CorrosionParameters,
    pub scheme: SchemeSection,
    /// Final time [s].
    pub horizon: f64,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default)]
    pub outputs: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceSection>,
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        let d = g.extent.len();
        if !(d == 2 || d == 3) || g.bc.len() != d {
            return Err(Error::Config("grid.extent and grid.bc must list 2 or 3 axes".into()));
        }
        if !(g.h > 0.0) || g.extent.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::Config("grid.h and grid.extent must be positive".into()));
        }
        self.params.validate()?;
        if !(self.scheme.dt > 0.0) {
            return Err(Error::Config("scheme.dt must be positive".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if let Some(t) = self.snapshot_times.iter().find(|t| !(**t >= 0.0 && **t <= self.horizon * (1.0 + 1e-12))) {
            return Err(Error::Config(format!("snapshot time {t} outside [0, horizon]")));
        }
        if !self.geometry.is_empty() && self.scheme.variant.is_none() {
            return Err(Error::Config("scheme.variant is required when geometry is present".into()));
        }
        if let Some(a) = self.outputs.front_axis {
            if a >= d {
                return Err(Error::Config(format!("outputs.front_axis {a} out of range")));
            }
        }
        if let Some(r) = self.reference {
            if r.dt_divisor == 0 || r.h_divisor == 0 {
                return Err(Error::Config("reference divisors must be at least 1".into()));
            }
        }
        Ok(())
    }

    pub fn is_rectangular(&self) -> bool {
        self.geometry.is_empty()
    }

    pub fn grid_spec(&self) -> GridSpec {
        let g = &self.grid;
        GridSpec {
            axes: g
                .extent
                .iter()
                .zip(&g.bc)
                .map(|(&e, &(lo, hi))| AxisSpec::with_spacing(e * UM, g.h * UM, lo, hi))
                .collect(),
        }
    }

    pub fn shapes_si(&self) -> Vec<Shape> {
        self.geometry.iter().map(|s| scale_shape(s, UM)).collect()
    }

    /// Shrinks the run for desk-scale checks: times scale by `s`, extents by
    /// `√s` (never below the smallest original extent, snapped to `h`), and
    /// shapes keep their relative positions and absolute sizes.
    pub fn with_horizon_scale(&self, s: f64) -> Result<Self> {
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::Config(format!("horizon scale must lie in (0, 1], got {s}")));
        }
        let mut out = self.clone();
        if s == 1.0 {
            return Ok(out);
        }
        let dt = self.scheme.dt;
        out.horizon = ((self.horizon * s / dt).round().max(1.0)) * dt;
        out.snapshot_times = self.snapshot_times.iter().map(|t| ((t * s / dt).round() * dt).min(out.horizon)).collect();
        let min_extent = self.grid.extent.iter().copied().fold(f64::INFINITY, f64::min);
        let h = self.grid.h;
        let old = self.grid.extent.clone();
        out.grid.extent = old.iter().map(|e| ((e * s.sqrt()).max(min_extent) / h).round() * h).collect();
        let frac = |a: usize, x: f64| x / old[a] * out.grid.extent[a];
        out.geometry = self
            .geometry
            .iter()
            .map(|shape| match shape {
                Shape::Circle { center, radius } => {
                    Shape::Circle { center: center.iter().enumerate().map(|(a, &x)| frac(a, x)).collect(), radius: *radius }
                }
                Shape::CylinderSegment { start, axis, radius, length } => {
                    let mut st = *start;
                    for (a, x) in st.iter_mut().enumerate() {
                        if a != *axis {
                            *x = frac(a, *x);
                        }
                    }
                    Shape::CylinderSegment { start: st, axis: *axis, radius: *radius, length: length.min(out.grid.extent[*axis]) }
                }
                Shape::RoughEdge { base, amplitude, wavelength, seed } => {
                    Shape::RoughEdge { base: frac(1, *base), amplitude: *amplitude, wavelength: *wavelength, seed: *seed }
                }
            })
            .collect();
        out.validate()?;
        Ok(out)
    }
}

fn scale_shape(s: &Shape, f: f64) -> Shape {
    match s {
        Shape::Circle { center, radius } => Shape::Circle { center: center.iter().map(|x| x * f).collect(), radius: radius * f },
        Shape::CylinderSegment { start, axis, radius, length } => Shape::CylinderSegment {
            start: start.map(|x| x * f),
            axis: *axis,
            radius: radius * f,
            length: length * f,
        },
        Shape::RoughEdge { base, amplitude, wavelength, seed } => {
            Shape::RoughEdge { base: base * f, amplitude: amplitude * f, wavelength: wavelength * f, seed: *seed }
        }
    }
}

pub const BUILTIN_NAMES: [&str; 5] = ["pencil2d", "circular_pit", "electropolish", "pencil3d", "semicylinder3d"];

/// The builtin experiments.
pub fn builtin(name: &str) -> Result<ScenarioConfig> {
    use BcKind::{Dirichlet as D, Neumann as N};
    let base = |name: &str, extent: Vec<f64>, bc: Vec<(BcKind, BcKind)>, scheme: SchemeSection, horizon: f64| ScenarioConfig {
        name: name.into(),
        description: None,
        grid: GridSection { extent, h: 1.0, bc },
        geometry: vec![],
        initial: InitialSection::default(),
        boundary: BoundarySection::default(),
        params: CorrosionParameters::default(),
        scheme,
        horizon,
        snapshot_times: vec![],
        outputs: OutputSection::default(),
        reference: None,
    };
    let cfg = match name {
        "pencil2d" => {
            let mut c = base(
                name,
                vec![25.0, 300.0],
                vec![(N, N), (D, D)],
                SchemeSection::new(None, Order::Euler, 1e-3),
                225.0,
            );
            c.description = Some("wire of 25x300 um exposed at both ends".into());
            c.snapshot_times = vec![25.0, 75.0, 150.0, 225.0];
            c.outputs.front_axis = Some(1);
            c
        }
        "circular_pit" => {
            let mut s = SchemeSection::new(Some(Variant::ImexE), Order::Euler, 2e-3);
            s.eps1 = Some(1e-4);
            s.eps2 = Some(1e-3);
            s.eps3 = Some(1e-8);
            let mut c = base(name, vec![200.0, 100.0], vec![(N, N), (N, N)], s, 100.0);
            c.description = Some("pit of 4 um diameter in the middle of a 200x100 um plate".into());
            c.geometry = vec![Shape::Circle { center: vec![100.0, 50.0], radius: 2.0 }];
            c.snapshot_times = vec![25.0, 50.0, 100.0];
            c
        }
        "electropolish" => {
            let mut s = SchemeSection::new(Some(Variant::ImexE), Order::Euler, 6e-4);
            s.eps3 = Some(1e-7);
            let mut c = base(name, vec![200.0, 100.0], vec![(N, N), (N, N)], s, 20.0);
            c.description = Some("parametric rough top edge (piecewise linear, seeded) standing in for the measured profile".into());
            c.geometry = vec![Shape::RoughEdge { base: 80.0, amplitude: 8.0, wavelength: 12.5, seed: 7 }];
            c.snapshot_times = vec![5.0, 10.0, 20.0];
            c
        }
        "pencil3d" => {
            let mut c = base(
                name,
                vec![25.0, 25.0, 150.0],
                vec![(N, N), (N, N), (N, D)],
                SchemeSection::new(None, Order::TwoSbdf, 0.02),
                225.0,
            );
            c.description = Some("coated 25x25x150 um wire exposed at the top".into());
            c.snapshot_times = vec![75.0, 150.0, 225.0];
            c.outputs.front_axis = Some(2);
            c.outputs.front_from = End::High;
            c
        }
        "semicylinder3d" => {
            let mut s = SchemeSection::new(Some(Variant::ImexE), Order::TwoSbdf, 6e-3);
            s.eps3 = Some(3e-8);
            let mut c = base(name, vec![200.0, 25.0, 100.0], vec![(N, N), (N, N), (N, N)], s, 225.0);
            c.description = Some("semi-cylindrical cavity of 4 um diameter along the top center line".into());
            c.geometry = vec![Shape::CylinderSegment { start: [100.0, 0.0, 100.0], axis: 1, radius: 2.0, length: 25.0 }];
            c.snapshot_times = vec![75.0, 150.0, 225.0];
            c
        }
        _ => {
            return Err(Error::Config(format!("unknown scenario {name:?}; known: {}", BUILTIN_NAMES.join(", "))));
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Error of a run against its reference at one snapshot time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorRow {
    pub t: f64,
    pub err_phi: f64,
    pub err_c: f64,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub name: String,
    pub grid: Grid,
    pub mask: Option<DomainMask>,
    pub w: f64,
    pub snapshots: Vec<(f64, FieldPair)>,
    pub final_state: FieldPair,
    pub reports: Vec<IterationReport>,
    pub stats: RunStats,
    /// `(t, front depth [m])` samples.
    pub front: Vec<(f64, f64)>,
    pub errors: Vec<ErrorRow>,
    pub written: Vec<PathBuf>,
}

/// Grid, mask and initial state of a scenario.
pub struct Prepared {
    pub ctx: RectContext,
    pub mask: Option<DomainMask>,
    pub state0: FieldPair,
    pub w: f64,
}

pub fn prepare(cfg: &ScenarioConfig) -> Result<Prepared> {
    cfg.validate()?;
    let grid = build_grid(&cfg.grid_spec())?;
    let n = grid.n_nodes();
    let mask = if cfg.is_rectangular() { None } else { Some(rasterize_mask(&grid, &cfg.shapes_si())?) };
    let mut state0 = FieldPair::constant(n, cfg.initial.phi, cfg.initial.c);
    if let Some(m) = &mask {
        for &p in &m.theta_nodes {
            state0.phi[p] = 0.0;
            state0.c[p] = 0.0;
        }
    }
    let w = match cfg.scheme.w {
        Some(w) => w,
        None => {
            let policy = RelaxationPolicy::default_for(&cfg.params);
            estimate_relaxation_w(&cfg.params, &policy, Some((&state0.phi, &state0.c)))?
        }
    };
    let dim = grid.dim();
    let bdata = if cfg.boundary.phi == 0.0 && cfg.boundary.c == 0.0 {
        BoundaryData::homogeneous(dim)
    } else {
        BoundaryData::uniform(dim, cfg.boundary.phi, cfg.boundary.c)
    };
    let ctx = RectContext::new(grid, cfg.params, bdata)?;
    Ok(Prepared { ctx, mask, state0, w })
}

fn iter_config(cfg: &ScenarioConfig, w: f64) -> Result<IterSchemeConfig> {
    let s = &cfg.scheme;
    let variant = s.variant.ok_or_else(|| Error::Config("scheme.variant is required for holes".into()))?;
    let mut c = IterSchemeConfig::new(variant, s.order, s.dt, w);
    if let Some(v) = s.eps1 {
        c.eps1 = v;
    }
    if let Some(v) = s.eps2 {
        c.eps2 = v;
    }
    if let Some(v) = s.eps3 {
        c.eps3 = v;
    }
    if let Some(v) = s.max_iters {
        c.max_iters = v;
    }
    c.stop_mode = s.stop_mode;
    c.bootstrap = s.bootstrap;
    c.validate()?;
    Ok(c)
}

/// Runs a scenario. Outputs are written under `out_dir` when given; a
/// reference block triggers a fine-step reference run and an error table.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: Option<&Path>) -> Result<RunArtifacts> {
    let mut art = simulate(cfg)?;
    if let Some(r) = cfg.reference {
        let (_, reference) = generate_reference(cfg, r)?;
        art.errors = compare_to_reference(&art, &reference, r.h_divisor)?;
    }
    if let Some(dir) = out_dir {
        art.written = write_artifacts(cfg, &art, dir)?;
    }
    Ok(art)
}

/// Number of front samples aimed for over a run.
const FRONT_SAMPLES: usize = 500;

fn simulate(cfg: &ScenarioConfig) -> Result<RunArtifacts> {
    let prep = prepare(cfg)?;
    let Prepared { ctx, mask, state0, w } = prep;
    let n_steps = crate::rect::step_count(cfg.horizon, cfg.scheme.dt)?;
    let every = (n_steps / FRONT_SAMPLES).max(1);
    let front_axis = cfg.outputs.front_axis;
    let from = cfg.outputs.front_from;
    let mut front = Vec::new();
    let mut sample = |s: &FieldPair| {
        if let Some(axis) = front_axis {
            if s.step_index % every == 0 || s.step_index == n_steps {
                if let Ok(d) = front_position(&ctx.grid, &s.c, axis, 0.5, from) {
                    front.push((s.t, d));
                }
            }
        }
    };
    let (out, reports) = match &mask {
        None => {
            let sc = SchemeConfig { order: cfg.scheme.order, dt: cfg.scheme.dt, w, bootstrap: cfg.scheme.bootstrap };
            (run_rect(&ctx, state0, &sc, cfg.horizon, &cfg.snapshot_times, &mut |s| sample(s))?, vec![])
        }
        Some(m) => {
            let ic = iter_config(cfg, w)?;
            let o = run_holes(&ctx, m.clone(), state0, &ic, cfg.horizon, &cfg.snapshot_times, HoleRunOptions::default(), &mut |s, _| {
                sample(s)
            })?;
            (o.run, o.reports)
        }
    };
    Ok(RunArtifacts {
        name: cfg.name.clone(),
        grid: ctx.grid,
        mask,
        w,
        snapshots: out.snapshots,
        final_state: out.final_state,
        reports,
        stats: out.stats,
        front,
        errors: vec![],
        written: vec![],
    })
}

/// Configuration of the reference run for `cfg`.
pub fn reference_config(cfg: &ScenarioConfig, r: ReferenceSection) -> Result<ScenarioConfig> {
    if r.dt_divisor == 0 || r.h_divisor == 0 {
        return Err(Error::Config("reference divisors must be at least 1".into()));
    }
    if r.dt_divisor * r.h_divisor <= 1 {
        return Err(Error::Config("reference steps must be strictly finer than the scenario's".into()));
    }
    let mut out = cfg.clone();
    out.name = format!("{}_reference", cfg.name);
    out.scheme.dt = cfg.scheme.dt / r.dt_divisor as f64;
    out.grid.h = cfg.grid.h / r.h_divisor as f64;
    out.reference = None;
    out.validate()?;
    Ok(out)
}

/// Runs the fine-step reference of `cfg`.
pub fn generate_reference(cfg: &ScenarioConfig, r: ReferenceSection) -> Result<(ScenarioConfig, RunArtifacts)> {
    let rc = reference_config(cfg, r)?;
    let art = simulate(&rc)?;
    Ok((rc, art))
}

/// Restriction of a fine-grid field to the nodes of a coarse grid whose
/// spacing is `div` times larger.
pub fn restrict_to_coarse(fine: &Grid, coarse: &Grid, div: usize, u: &[f64]) -> Result<Vec<f64>> {
    if fine.dim() != coarse.dim() {
        return Err(Error::Dimension("grids differ in dimension".into()));
    }
    let map: Vec<Vec<usize>> = coarse
        .axes
        .iter()
        .zip(&fine.axes)
        .map(|(c, f)| {
            (0..c.count)
                .map(|i| {
                    let lattice = (c.first + i) * div;
                    lattice.checked_sub(f.first).filter(|&k| k < f.count).ok_or_else(|| {
                        Error::Dimension("coarse node missing from the fine grid".into())
                    })
                })
                .collect::<Result<Vec<usize>>>()
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(coarse.n_nodes());
    for p in 0..coarse.n_nodes() {
        let ix = coarse.multi_index(p);
        let f = [0, 1, 2].map(|a| if a < map.len() { map[a][ix[a]] } else { 0 });
        out.push(u[fine.index(f[0], f[1], f[2])]);
    }
    Ok(out)
}

fn compare_to_reference(art: &RunArtifacts, reference: &RunArtifacts, h_div: usize) -> Result<Vec<ErrorRow>> {
    let mut rows = Vec::new();
    for (t, s) in &art.snapshots {
        let Some((_, r)) = reference.snapshots.iter().find(|(tr, _)| (tr - t).abs() <= 1e-9 * t.abs().max(1.0)) else {
            continue;
        };
        let rs = FieldPair {
            phi: restrict_to_coarse(&reference.grid, &art.grid, h_div, &r.phi)?,
            c: restrict_to_coarse(&reference.grid, &art.grid, h_div, &r.c)?,
            t: r.t,
            step_index: r.step_index,
        };
        let (ep, ec) = error_norms(s, &rs)?;
        rows.push(ErrorRow { t: *t, err_phi: ep, err_c: ec });
    }
    Ok(rows)
}

/// Scheme description stored in snapshot headers.
pub fn scheme_metadata(cfg: &ScenarioConfig, w: f64) -> serde_json::Value {
    serde_json::json!({
        "scenario": cfg.name,
        "variant": cfg.scheme.variant,
        "order": cfg.scheme.order,
        "dt": cfg.scheme.dt,
        "w": w,
        "eps": [cfg.scheme.eps1, cfg.scheme.eps2, cfg.scheme.eps3],
        "stop_mode": cfg.scheme.stop_mode,
        "horizon": cfg.horizon,
    })
}

pub fn write_artifacts(cfg: &ScenarioConfig, art: &RunArtifacts, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let meta = scheme_metadata(cfg, art.w);
    let fmt = cfg.outputs.format;
    for (k, (t, s)) in art.snapshots.iter().enumerate() {
        let p = dir.join(format!("snapshot_{k:03}_t{t}.{}", fmt.extension()));
        export_snapshot(&p, &art.grid, s, fmt, meta.clone())?;
        written.push(p);
    }
    if cfg.outputs.iteration_log && !art.reports.is_empty() {
        let p = dir.join("iterations.csv");
        write_iteration_log(&p, &art.reports)?;
        written.push(p);
    }
    if !art.front.is_empty() {
        let p = dir.join("front.csv");
        write_series(&p, "t,depth_m", &art.front)?;
        written.push(p);
    }
    if !art.errors.is_empty() {
        let p = dir.join("errors.csv");
        let mut text = String::from("t,err_phi,err_c\n");
        for e in &art.errors {
            text.push_str(&format!("{},{:e},{:e}\n", e.t, e.err_phi, e.err_c));
        }
        std::fs::write(&p, text)?;
        written.push(p);
    }
    let p = dir.join("summary.json");
    let summary = serde_json::json!({
        "scenario": cfg.name,
        "nodes": art.grid.n_nodes(),
        "holes": art.mask.as_ref().map_or(0, |m| m.theta_nodes.len()),
        "w": art.w,
        "stats": art.stats,
        "mean_k_phi": mean(art.reports.iter().map(|r| r.k_phi as f64)),
        "mean_k_c": mean(art.reports.iter().map(|r| r.k_c as f64)),
        "config": cfg,
    });
    std::fs::write(&p, serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(std::io::Error::other(e)))?)?;
    written.push(p);
    let p = dir.join("scenario.toml");
    std::fs::write(&p, cfg.to_toml_string())?;
    written.push(p);
    Ok(written)
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = it.collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    /// Multipliers of the scenario's Δt.
    Dt(Vec<f64>),
    /// Divisors of the scenario's h.
    H(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingPoint {
    /// Δt [s] or h [m].
    pub value: f64,
    pub steps: usize,
    pub nodes: usize,
    /// Time spent in the step loop [s].
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub parameter: &'static str,
    pub points: Vec<ScalingPoint>,
    pub fit: LinearFit,
}

/// Runs `cfg` over the sweep and fits log(loop time) against log(parameter).
pub fn scaling_report(cfg: &ScenarioConfig, sweep: &Sweep) -> Result<ScalingReport> {
    let (parameter, factors) = match sweep {
        Sweep::Dt(v) => ("dt", v),
        Sweep::H(v) => ("h", v),
    };
    if factors.len() < 3 {
        return Err(Error::Config("a scaling sweep needs at least 3 points".into()));
    }
    let mut points = Vec::new();
    for &f in factors {
        if !(f > 0.0) {
            return Err(Error::Config("sweep factors must be positive".into()));
        }
        let mut c = cfg.clone();
        c.snapshot_times.clear();
        c.outputs.front_axis = None;
        c.reference = None;
        let value = match sweep {
            Sweep::Dt(_) => {
                c.scheme.dt = cfg.scheme.dt * f;
                c.horizon = (cfg.horizon / c.scheme.dt).round().max(1.0) * c.scheme.dt;
                c.scheme.dt
            }
            Sweep::H(_) => {
                c.grid.h = cfg.grid.h / f;
                c.grid.h * UM
            }
        };
        let t0 = Instant::now();
        let art = simulate(&c)?;
        let loop_s = art.stats.mean_step_ms * art.stats.steps as f64 / 1e3;
        let seconds = if loop_s > 0.0 { loop_s } else { t0.elapsed().as_secs_f64() };
        points.push(ScalingPoint { value, steps: art.stats.steps, nodes: art.grid.n_nodes(), seconds });
    }
    let x: Vec<f64> = points.iter().map(|p| p.value).collect();
    let y: Vec<f64> = points.iter().map(|p| p.seconds).collect();
    let fit = loglog_fit(&x, &y)?;
    Ok(ScalingReport { parameter, points, fit })
}
