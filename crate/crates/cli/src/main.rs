//! `dvem`: convergence runs, property diagnostics and mesh inspection.
//!
//! Exit codes: 0 success, 1 configuration error, 2 solver failure, 3 property failure.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dvem::experiment::{run_convergence, run_diagnostics, ExperimentConfig, ExperimentError, GammaSetting, MeshFamily};
use dvem::mesh::{read_mesh, write_mesh, PolygonalMesh};
use dvem::vi_solver::write_trace_csv;

const CONFIG_ERROR: u8 = 1;
const SOLVER_FAILURE: u8 = 2;
const PROPERTY_FAILURE: u8 = 3;

#[derive(Parser)]
#[command(name = "dvem", version, about = "Discontinuous virtual element experiments for a frictional variational inequality")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve every level of a mesh family and write the convergence table.
    Run {
        #[command(flatten)]
        common: Overrides,
        #[arg(long)]
        levels: Option<usize>,
        /// CSV destination; defaults to the config's `output`, then stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory receiving one solver trace CSV per level.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run the property battery on the coarsest mesh of the configured family.
    Check {
        #[command(flatten)]
        common: Overrides,
    },
    /// Print statistics of a mesh file, or write a family member to a file.
    Mesh {
        #[arg(long, value_name = "FILE", conflicts_with = "write")]
        show: Option<PathBuf>,
        #[arg(long, value_name = "FILE", requires = "family")]
        write: Option<PathBuf>,
        #[arg(long, value_parser = parse_family)]
        family: Option<MeshFamily>,
        #[arg(long, default_value_t = 0)]
        level: usize,
    },
}

#[derive(Args)]
struct Overrides {
    /// JSON experiment configuration; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<i32>,
    /// A positive number or `auto`.
    #[arg(long)]
    gamma: Option<GammaSetting>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_family(s: &str) -> Result<MeshFamily, String> {
    match s {
        "uniform" => Ok(MeshFamily::Uniform),
        "figure1" => Ok(MeshFamily::Figure1),
        "quadtree" => Ok(MeshFamily::Quadtree),
        _ => Err(format!("unknown mesh family `{s}` (uniform, figure1, quadtree)")),
    }
}

struct Failure {
    code: u8,
    message: String,
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure { code: CONFIG_ERROR, message: message.into() }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> Failure {
    config_error(format!("{}: {e}", path.display()))
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        let code = match e {
            ExperimentError::Config(_) => CONFIG_ERROR,
            ExperimentError::Level { .. } => SOLVER_FAILURE,
        };
        Failure { code, message: e.to_string() }
    }
}

fn load_config(o: &Overrides) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &o.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(d) = o.delta {
        cfg.delta = d;
    }
    if let Some(g) = o.gamma {
        cfg.gamma = g;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(common: &Overrides, levels: Option<usize>, out: Option<PathBuf>, trace: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg = load_config(common)?;
    if let Some(l) = levels {
        cfg.levels = l;
    }
    if out.is_some() {
        cfg.output = out;
    }
    cfg.validate()?;
    let outcome = run_convergence(&cfg)?;
    let report = &outcome.report;
    match &cfg.output {
        Some(path) => {
            let f = File::create(path).map_err(|e| io_error(path, e))?;
            let mut w = BufWriter::new(f);
            report.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| io_error(path, e))?;
        }
        None => report.write_csv(std::io::stdout().lock()).map_err(|e| config_error(e.to_string()))?,
    }
    if let Some(dir) = trace {
        std::fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
        for (level, s) in outcome.levels.iter().enumerate() {
            let path = dir.join(format!("trace_level{level}.csv"));
            let f = File::create(&path).map_err(|e| io_error(&path, e))?;
            write_trace_csv(&s.trace, BufWriter::new(f)).map_err(|e| io_error(&path, e))?;
        }
    }
    eprintln!("case {} ({:?}), gamma {}", report.case, report.regime, report.gamma);
    for r in &report.rows {
        let eoc = r.eoc.map_or("-".to_string(), |e| format!("{e:.3}"));
        eprintln!("level {} h {:.4e} N {} err {:.4e} eoc {} iters {}", r.level, r.h, r.n, r.err_1dg, eoc, r.iters);
    }
    Ok(())
}

fn check(common: &Overrides) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    cfg.validate()?;
    let report = run_diagnostics(&cfg)?;
    print!("{report}");
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure { code: PROPERTY_FAILURE, message: "some properties failed".into() })
    }
}

fn mesh_stats(mesh: &PolygonalMesh) -> String {
    let internal = mesh.internal_segments().count();
    let boundary = mesh.boundary_segments().count();
    let gamma2 = mesh.segments.iter().filter(|s| s.tag == Some(dvem::mesh::BoundaryTag::Gamma2)).count();
    // a vertex is hanging when it lies on an element edge without being a vertex of that element
    let tol = mesh.tolerance();
    let hanging = mesh
        .vertices
        .iter()
        .filter(|v| {
            let p = v.point();
            mesh.elements.iter().any(|el| {
                (0..el.num_vertices()).any(|i| {
                    let (a, b) = el.edge(i, &mesh.vertices);
                    let d = b - a;
                    let t = (p - a).dot(&d) / d.norm_squared();
                    t > 1e-9 && t < 1.0 - 1e-9 && (a + d * t - p).norm() <= tol
                })
            })
        })
        .count();
    let d = &mesh.domain;
    format!(
        "domain [{}, {}] x [{}, {}]\nvertices {}\nelements {}\nsegments {} (internal {}, boundary {}, friction {})\nhanging nodes {}\nh {:.6e}\nregularity gamma1 {:.6e} gamma2 {:.6e}\n",
        d.x0, d.x1, d.y0, d.y1,
        mesh.vertices.len(),
        mesh.num_elements(),
        mesh.segments.len(), internal, boundary, gamma2,
        hanging,
        mesh.h,
        mesh.gamma1, mesh.gamma2,
    )
}

fn mesh_command(
    show: Option<PathBuf>,
    write: Option<PathBuf>,
    family: Option<MeshFamily>,
    level: usize,
) -> Result<(), Failure> {
    if let Some(path) = show {
        let f = File::open(&path).map_err(|e| io_error(&path, e))?;
        let mesh = read_mesh(BufReader::new(f)).map_err(|e| io_error(&path, e))?;
        print!("{}", mesh_stats(&mesh));
        return Ok(());
    }
    match (write, family) {
        (Some(path), Some(fam)) => {
            let mesh = fam.mesh(level).map_err(|e| config_error(e.to_string()))?;
            let f = File::create(&path).map_err(|e| io_error(&path, e))?;
            let mut w = BufWriter::new(f);
            write_mesh(&mesh, &mut w).map_err(|e| io_error(&path, e))?;
            w.flush().map_err(|e| io_error(&path, e))?;
            Ok(())
        }
        _ => Err(config_error("mesh needs --show <file> or --write <file> --family <name>")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { CONFIG_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run { common, levels, out, trace } => run(&common, levels, out, trace),
        Command::Check { common } => check(&common),
        Command::Mesh { show, write, family, level } => mesh_command(show, write, family, level),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
