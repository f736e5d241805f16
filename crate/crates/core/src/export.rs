//! Snapshot files, iteration logs and bound tables.
//!
//! Snapshots come in two formats. `csv` has a header `x,y[,z],phi,c` and one
//! row per node in x-fastest order with 17 significant digits. `raw-f64`
//! starts with a single JSON line holding dimensions and metadata, followed
//! by the φ values and then the c values as little-endian f64.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::BoundRow;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::holes::IterationReport;
use crate::rect::FieldPair;
use crate::spectral::BcKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SnapshotFormat {
    #[default]
    #[serde(rename = "csv")]
    Csv,
    #[serde(rename = "raw-f64", alias = "raw_f64")]
    RawF64,
}

impl SnapshotFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            SnapshotFormat::Csv => "csv",
            SnapshotFormat::RawF64 => "f64",
        }
    }
}

impl std::str::FromStr for SnapshotFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(SnapshotFormat::Csv),
            "raw-f64" | "raw_f64" => Ok(SnapshotFormat::RawF64),
            _ => Err(Error::Config(format!("unknown snapshot format {s:?}"))),
        }
    }
}

/// Header of a raw snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub t: f64,
    pub step: usize,
    pub fields: Vec<String>,
    /// Node counts per axis.
    pub dims: Vec<usize>,
    pub extents: Vec<f64>,
    pub spacings: Vec<f64>,
    pub bc: Vec<(BcKind, BcKind)>,
    /// Free-form scheme description.
    #[serde(default)]
    pub scheme: serde_json::Value,
}

impl SnapshotHeader {
    pub fn new(grid: &Grid, state: &FieldPair, scheme: serde_json::Value) -> Self {
        Self {
            t: state.t,
            step: state.step_index,
            fields: vec!["phi".into(), "c".into()],
            dims: grid.counts(),
            extents: grid.axes.iter().map(|a| a.spec.extent).collect(),
            spacings: grid.spacings(),
            bc: grid.axes.iter().map(|a| (a.spec.low, a.spec.high)).collect(),
            scheme,
        }
    }
}

pub fn export_snapshot(path: &Path, grid: &Grid, state: &FieldPair, format: SnapshotFormat, scheme: serde_json::Value) -> Result<()> {
    let n = grid.n_nodes();
    if state.phi.len() != n || state.c.len() != n {
        return Err(Error::Dimension("state does not match grid".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        SnapshotFormat::Csv => {
            let names = ["x", "y", "z"];
            let d = grid.dim();
            writeln!(w, "{},phi,c", names[..d].join(","))?;
            for p in 0..n {
                let x = grid.coords(p);
                for xa in &x[..d] {
                    write!(w, "{xa:.16e},")?;
                }
                writeln!(w, "{:.16e},{:.16e}", state.phi[p], state.c[p])?;
            }
        }
        SnapshotFormat::RawF64 => {
            let header = SnapshotHeader::new(grid, state, scheme);
            writeln!(w, "{}", serde_json::to_string(&header).map_err(|e| Error::Io(io::Error::other(e)))?)?;
            for v in state.phi.iter().chain(&state.c) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a raw snapshot back into its header and `(φ, c)`.
pub fn read_raw_snapshot(path: &Path) -> Result<(SnapshotHeader, Vec<f64>, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: SnapshotHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Config(format!("bad snapshot header: {e}")))?;
    let n: usize = header.dims.iter().product();
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 16 * n {
        return Err(Error::Dimension(format!("payload has {} bytes, expected {}", bytes.len(), 16 * n)));
    }
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    let (phi, c) = vals.split_at(n);
    Ok((header, phi.to_vec(), c.to_vec()))
}

pub fn write_iteration_log(path: &Path, reports: &[IterationReport]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "step,t,k_phi,k_c,maxPhiTheta,maxCTheta,wall_ms")?;
    for r in reports {
        writeln!(w, "{},{},{},{},{:e},{:e},{:.4}", r.step, r.t, r.k_phi, r.k_c, r.max_phi_theta, r.max_c_theta, r.wall_ms)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bounds_csv(path: &Path, rows: &[BoundRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_bounds(&mut w, rows)?;
    w.flush()?;
    Ok(())
}

pub fn write_bounds(w: &mut dyn Write, rows: &[BoundRow]) -> Result<()> {
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:e}"));
    writeln!(w, "variant,bc,dt,h,gamma,bound,actual,admissible")?;
    for r in rows {
        let bc = match r.bc {
            BcKind::Dirichlet => "dirichlet",
            BcKind::Neumann => "neumann",
        };
        writeln!(w, "{},{bc},{:e},{:e},{},{},{},{}", r.variant, r.dt, r.h, r.gamma, opt(r.bound), opt(r.actual), r.admissible)?;
    }
    Ok(())
}

/// Two-column CSV of a time series.
pub fn write_series(path: &Path, header: &str, rows: &[(f64, f64)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for (a, b) in rows {
        writeln!(w, "{a},{b:e}")?;
    }
    w.flush()?;
    Ok(())
}
