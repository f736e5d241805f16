use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use corrosim::analysis::{
    actual_spectral_radius, bound_spectral_radius, BoundQuery, BoundRow, Equation, GeometryClass,
};
use corrosim::export::{export_snapshot, write_bounds, write_bounds_csv, SnapshotFormat};
use corrosim::grid::{build_correction_matrices, build_grid, rasterize_mask, AxisSpec, GridSpec, Shape};
use corrosim::holes::Variant;
use corrosim::rect::{factorize_grid, Order};
use corrosim::scenario::{
    builtin, generate_reference, run_scenario, scaling_report, scheme_metadata, ReferenceSection, ScenarioConfig,
    Sweep, BUILTIN_NAMES,
};
use corrosim::spectral::BcKind;
use corrosim::Result;

#[derive(Parser)]
#[command(name = "corrosim", version, about = "Phase-field pitting corrosion solver")]
struct Cli {
    /// Root directory for run outputs.
    #[arg(long, env = "CORROSIM_OUTPUT_DIR", default_value = "corrosim-output", global = true)]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file, or the name of a builtin scenario.
    config: String,
    /// Shrink the horizon by this factor (and extents by its square root).
    #[arg(long, default_value_t = 1.0)]
    horizon_scale: f64,
    /// Output directory; defaults to <output-root>/<scenario name>.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its snapshots, logs and summary.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Override the snapshot format.
        #[arg(long)]
        format: Option<SnapshotFormat>,
    },
    /// Compute and store a fine-step reference solution.
    Reference {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 8)]
        dt_divisor: usize,
        #[arg(long, default_value_t = 1)]
        h_divisor: usize,
    },
    /// Time a scenario over several step sizes and fit the cost slope.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Multipliers of the scenario's time step.
        #[arg(long, value_delimiter = ',', conflicts_with = "h", required_unless_present = "h")]
        dt: Vec<f64>,
        /// Divisors of the scenario's grid spacing.
        #[arg(long, value_delimiter = ',')]
        h: Vec<f64>,
    },
    /// Evaluate spectral-radius bounds (and optionally measured radii).
    Bounds(BoundsArgs),
    /// List the builtin scenarios.
    ListScenarios,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    ImexI,
    ImexE,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    Euler,
    #[value(name = "2sbdf")]
    TwoSbdf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BcArg {
    Dirichlet,
    Neumann,
}

#[derive(Clone, Copy, ValueEnum)]
enum EquationArg {
    Phi,
    C,
}

#[derive(Clone, Copy, ValueEnum)]
enum GeometryArg {
    Generic,
    Circle,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, value_enum, default_value = "imex-i")]
    variant: VariantArg,
    #[arg(long, value_enum, default_value = "euler")]
    order: OrderArg,
    #[arg(long, value_enum, default_value = "neumann")]
    bc: BcArg,
    #[arg(long, value_enum, default_value = "c")]
    equation: EquationArg,
    #[arg(long, value_enum, default_value = "circle")]
    geometry: GeometryArg,
    /// Grid spacing [μm].
    #[arg(long, default_value_t = 1.0)]
    h: f64,
    /// Time steps [s].
    #[arg(long, value_delimiter = ',', default_value = "1e-7,1e-6,1e-5,1e-4")]
    dt: Vec<f64>,
    #[arg(long, default_value_t = corrosim::model::DEFAULT_W)]
    w: f64,
    /// Also measure the radius on a 200x100 um plate with a 2 um pit.
    #[arg(long)]
    actual: bool,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(arg: &ScenarioArgs) -> Result<ScenarioConfig> {
    let path = Path::new(&arg.config);
    let cfg = if path.exists() { ScenarioConfig::from_path(path)? } else { builtin(&arg.config)? };
    cfg.with_horizon_scale(arg.horizon_scale)
}

fn out_dir(root: &Path, arg: &ScenarioArgs, cfg: &ScenarioConfig, suffix: &str) -> PathBuf {
    arg.out.clone().unwrap_or_else(|| match &cfg.outputs.dir {
        Some(d) if d.is_absolute() => d.clone(),
        Some(d) => root.join(d),
        None => root.join(format!("{}{suffix}", cfg.name)),
    })
}

fn run(cli: Cli) -> Result<()> {
    let root = cli.output_root;
    match cli.command {
        Command::Run { scenario, format } => {
            let mut cfg = load(&scenario)?;
            if let Some(f) = format {
                cfg.outputs.format = f;
            }
            let dir = out_dir(&root, &scenario, &cfg, "");
            let art = run_scenario(&cfg, Some(&dir))?;
            println!(
                "{}: {} steps, {:.3} s, {:.3} ms/step, {} files in {}",
                cfg.name,
                art.stats.steps,
                art.stats.wall_s,
                art.stats.mean_step_ms,
                art.written.len(),
                dir.display()
            );
            for e in &art.errors {
                println!("t={} Err_phi={:e} Err_c={:e}", e.t, e.err_phi, e.err_c);
            }
        }
        Command::Reference { scenario, dt_divisor, h_divisor } => {
            let cfg = load(&scenario)?;
            let (rc, art) = generate_reference(&cfg, ReferenceSection { dt_divisor, h_divisor })?;
            let dir = out_dir(&root, &scenario, &cfg, "_reference");
            std::fs::create_dir_all(&dir)?;
            let mut meta = scheme_metadata(&rc, art.w);
            meta["reference_of"] = serde_json::json!(cfg.name);
            meta["dt_divisor"] = serde_json::json!(dt_divisor);
            meta["h_divisor"] = serde_json::json!(h_divisor);
            for (k, (t, s)) in art.snapshots.iter().enumerate() {
                export_snapshot(&dir.join(format!("reference_{k:03}_t{t}.f64")), &art.grid, s, SnapshotFormat::RawF64, meta.clone())?;
            }
            std::fs::write(dir.join("scenario.toml"), rc.to_toml_string())?;
            println!("{}: {} reference snapshots in {}", rc.name, art.snapshots.len(), dir.display());
        }
        Command::Sweep { scenario, dt, h } => {
            let cfg = load(&scenario)?;
            let sweep = if !dt.is_empty() { Sweep::Dt(dt) } else { Sweep::H(h) };
            let rep = scaling_report(&cfg, &sweep)?;
            println!("{},steps,nodes,seconds", rep.parameter);
            for p in &rep.points {
                println!("{:e},{},{},{:.6}", p.value, p.steps, p.nodes, p.seconds);
            }
            println!("slope {:.4} (R^2 {:.4})", rep.fit.slope, rep.fit.r2);
        }
        Command::Bounds(b) => bounds(b)?,
        Command::ListScenarios => {
            for name in BUILTIN_NAMES {
                let c = builtin(name)?;
                println!("{name:16} {}", c.description.unwrap_or_default());
            }
        }
    }
    Ok(())
}

fn bounds(b: BoundsArgs) -> Result<()> {
    let variant = match b.variant {
        VariantArg::ImexI => Variant::ImexI,
        VariantArg::ImexE => Variant::ImexE,
    };
    let order = match b.order {
        OrderArg::Euler => Order::Euler,
        OrderArg::TwoSbdf => Order::TwoSbdf,
    };
    let bc = match b.bc {
        BcArg::Dirichlet => BcKind::Dirichlet,
        BcArg::Neumann => BcKind::Neumann,
    };
    let equation = match b.equation {
        EquationArg::Phi => Equation::Phi,
        EquationArg::C => Equation::C,
    };
    let h = b.h * 1e-6;
    let measured = if b.actual {
        let grid = build_grid(&GridSpec {
            axes: vec![AxisSpec::with_spacing(200e-6, h, bc, bc), AxisSpec::with_spacing(100e-6, h, bc, bc)],
        })?;
        let mask = rasterize_mask(&grid, &[Shape::Circle { center: vec![100e-6, 50e-6], radius: 2e-6 }])?;
        let ops = build_correction_matrices(&grid, &mask)?;
        let n = match variant {
            Variant::ImexI => ops.sum(),
            Variant::ImexE => ops.n1.clone(),
        };
        Some((factorize_grid(&grid)?, n))
    } else {
        None
    };
    let mut rows = Vec::new();
    for &dt in &b.dt {
        let mut q = BoundQuery::new(variant, order, bc, equation, h, dt);
        q.w = b.w;
        q.geometry = match b.geometry {
            GeometryArg::Generic => GeometryClass::Generic,
            GeometryArg::Circle => GeometryClass::Circle,
        };
        let bound = bound_spectral_radius(&q).value();
        let actual = match &measured {
            Some((facts, n)) => {
                let (alpha, beta) = match (equation, order) {
                    (Equation::Phi, Order::Euler) => (dt * q.params.d_phi, 1.0 + b.w * dt),
                    (Equation::Phi, Order::TwoSbdf) => (2.0 * dt * q.params.d_phi, 3.0 + 2.0 * b.w * dt),
                    (Equation::C, Order::Euler) => (dt * q.params.d_c, 1.0),
                    (Equation::C, Order::TwoSbdf) => (2.0 * dt * q.params.d_c, 3.0),
                };
                Some(actual_spectral_radius(alpha, beta, facts, n)?.radius)
            }
            None => None,
        };
        rows.push(BoundRow { variant, bc, dt, h, gamma: q.gamma(), bound, actual, admissible: bound.is_some() });
    }
    match b.out {
        Some(p) => write_bounds_csv(&p, &rows)?,
        None => {
            let mut out = std::io::stdout().lock();
            write_bounds(&mut out, &rows)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
