//! Experiment configuration, mesh families, convergence runs and the
//! diagnostic property battery.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    broken_norms, error_against_exact, norm_1dg, prolongate, AnalysisError, ConvergenceReport, ConvergenceRow,
    ExactSolutionCase, Regime,
};
use crate::dg_forms::{
    calibrate_gamma, exact_coercivity, jump_identity_sides, sampled_coercivity, BhParts, DgError, Discretization,
    GlobalSystem, EXACT_COERCIVITY_LIMIT,
};
use crate::linalg::norm_inf;
use crate::mesh::{
    build_uniform, figure1_mesh, refine_local, refine_uniform, BoundaryRule, MeshError, PolygonalMesh, Rectangle,
};
use crate::quadrature::{square_points, GaussRule};
use crate::vi_solver::{solve_uzawa, SolverConfig, SolverError, TraceRow};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFamily {
    /// `n × n` squares on the unit square with `n = 4·2^level`.
    #[default]
    Uniform,
    /// The two-square strip with one refined square, refined `level + 2` times.
    Figure1,
    /// The uniform family with every element whose barycenter has `x + y < 1` split once.
    Quadtree,
}

impl MeshFamily {
    pub fn domain(self) -> Rectangle {
        match self {
            MeshFamily::Figure1 => Rectangle { x0: 0.0, y0: 0.0, x1: 2.0, y1: 1.0 },
            _ => Rectangle::UNIT,
        }
    }

    pub fn mesh(self, level: usize) -> Result<PolygonalMesh, MeshError> {
        let rule = BoundaryRule::default();
        match self {
            MeshFamily::Uniform => build_uniform(Rectangle::UNIT, 4 << level, rule),
            MeshFamily::Quadtree => {
                let base = build_uniform(Rectangle::UNIT, 4 << level, rule)?;
                let marked: BTreeSet<usize> = base
                    .elements
                    .iter()
                    .filter(|e| e.barycenter.x + e.barycenter.y < 1.0)
                    .map(|e| e.id)
                    .collect();
                refine_local(&base, &marked)
            }
            MeshFamily::Figure1 => {
                let mut m = figure1_mesh(rule)?;
                for _ in 0..level + 2 {
                    m = refine_uniform(&m)?;
                }
                Ok(m)
            }
        }
    }
}

/// Penalty parameter: a fixed value or `"auto"` for calibration on the coarsest level.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum GammaSetting {
    #[default]
    Auto,
    Fixed(f64),
}

impl std::str::FromStr for GammaSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(GammaSetting::Auto);
        }
        s.parse::<f64>().map(GammaSetting::Fixed).map_err(|_| format!("gamma must be a number or `auto`, got `{s}`"))
    }
}

impl fmt::Display for GammaSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaSetting::Auto => f.write_str("auto"),
            GammaSetting::Fixed(g) => write!(f, "{g}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum GammaRepr {
    Number(f64),
    Text(String),
}

impl Serialize for GammaSetting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            GammaSetting::Auto => GammaRepr::Text("auto".into()).serialize(s),
            GammaSetting::Fixed(g) => GammaRepr::Number(*g).serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for GammaSetting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match GammaRepr::deserialize(d)? {
            GammaRepr::Number(g) => Ok(GammaSetting::Fixed(g)),
            GammaRepr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub tol: f64,
    pub rho: Option<f64>,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let d = SolverConfig::default();
        SolverSettings { tol: d.tol, rho: d.rho, max_iter: d.max_iter }
    }
}

impl From<&SolverSettings> for SolverConfig {
    fn from(s: &SolverSettings) -> Self {
        SolverConfig { rho: s.rho, tol: s.tol, max_iter: s.max_iter }
    }
}

/// JSON experiment description. Every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// `clamped`, `cosine` or `slip`.
    pub case: String,
    pub family: MeshFamily,
    pub levels: usize,
    pub delta: i32,
    pub gamma: GammaSetting,
    /// Friction bound; the case supplies a default.
    pub g: Option<f64>,
    pub solver: SolverSettings,
    pub seed: u64,
    /// CSV destination of the convergence table.
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            case: "clamped".into(),
            family: MeshFamily::Uniform,
            levels: 4,
            delta: 1,
            gamma: GammaSetting::Auto,
            g: None,
            solver: SolverSettings::default(),
            seed: 42,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if !ExactSolutionCase::NAMES.contains(&self.case.as_str()) {
            return bad(format!("unknown case `{}` (expected one of {:?})", self.case, ExactSolutionCase::NAMES));
        }
        if self.levels < 2 {
            return bad(format!("levels must be at least 2, got {}", self.levels));
        }
        if !(-1..=1).contains(&self.delta) {
            return bad(format!("delta must be -1, 0 or 1, got {}", self.delta));
        }
        if let GammaSetting::Fixed(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("gamma must be positive, got {g}"));
            }
        }
        if let Some(g) = self.g {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("g must be positive, got {g}"));
            }
        }
        SolverConfig::from(&self.solver).validate().map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn exact_case(&self) -> ExactSolutionCase {
        ExactSolutionCase::by_name(&self.case, self.family.domain(), self.g).expect("validated case name")
    }
}

/// Failure at one stage of one level.
#[derive(Debug, Error)]
pub enum LevelError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Forms(#[from] DgError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("level {level}: {source}")]
    Level {
        level: usize,
        #[source]
        source: LevelError,
    },
}

fn at<E: Into<LevelError>>(level: usize) -> impl FnOnce(E) -> ExperimentError {
    move |e| ExperimentError::Level { level, source: e.into() }
}

/// One solved level.
#[derive(Clone, Debug)]
pub struct LevelSolution {
    pub disc: Discretization,
    pub system: GlobalSystem,
    pub u: Vec<f64>,
    pub lambda: Vec<f64>,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
}

#[derive(Clone, Debug)]
pub struct ConvergenceOutcome {
    pub report: ConvergenceReport,
    pub levels: Vec<LevelSolution>,
}

fn resolve_gamma(config: &ExperimentConfig, coarsest: &Discretization) -> Result<f64, ExperimentError> {
    match config.gamma {
        GammaSetting::Fixed(g) => Ok(g),
        GammaSetting::Auto => Ok(calibrate_gamma(coarsest, config.delta, 10.0, 1e-3, 200, config.seed)
            .map_err(at(0))?
            .gamma),
    }
}

fn solve_level(
    config: &ExperimentConfig,
    case: &ExactSolutionCase,
    disc: Discretization,
    gamma: Option<f64>,
    level: usize,
) -> Result<(LevelSolution, f64), ExperimentError> {
    let gamma = match gamma {
        Some(g) => g,
        None => resolve_gamma(config, &disc)?,
    };
    let f = case.f.0.clone();
    let system = GlobalSystem::new(&disc, config.delta, gamma, &move |p| f(p), case.g).map_err(at(level))?;
    let sol = solve_uzawa(&system, &SolverConfig::from(&config.solver)).map_err(at(level))?;
    Ok((
        LevelSolution { disc, system, u: sol.u, lambda: sol.lambda, iterations: sol.iterations, trace: sol.trace },
        gamma,
    ))
}

/// Solves every level of the configured family and measures `‖u - u_h‖_{1,DG}`.
///
/// Cases without a closed form are measured against the solution two levels
/// beyond the last reported one.
pub fn run_convergence(config: &ExperimentConfig) -> Result<ConvergenceOutcome, ExperimentError> {
    config.validate()?;
    let case = config.exact_case();
    let total = match case.regime() {
        Regime::Analytic => config.levels,
        Regime::Reference => config.levels + 2,
    };
    let mut gamma = None;
    let mut levels = Vec::with_capacity(total);
    for level in 0..total {
        let mesh = config.family.mesh(level).map_err(at(level))?;
        let disc = Discretization::new(mesh).map_err(at(level))?;
        let (sol, g) = solve_level(config, &case, disc, gamma, level)?;
        gamma = Some(g);
        levels.push(sol);
    }
    let gamma = gamma.expect("at least two levels");
    let reference = levels.last().expect("at least two levels");
    let mut rows = Vec::with_capacity(config.levels);
    for (level, s) in levels.iter().enumerate().take(config.levels) {
        let err = match case.regime() {
            Regime::Analytic => error_against_exact(&s.disc, &case, &s.u).map_err(at(level))?,
            Regime::Reference => {
                let p = prolongate(&s.disc, &s.u, &reference.disc).map_err(at(level))?;
                let d: Vec<f64> = reference.u.iter().zip(&p).map(|(a, b)| a - b).collect();
                norm_1dg(&reference.disc, &d)
            }
        };
        rows.push(ConvergenceRow {
            level,
            h: s.disc.mesh.h,
            n: s.disc.num_dofs(),
            err_1dg: err.norm_1dg(),
            err_grad: err.grad_sq.sqrt(),
            err_l2: err.l2_sq.sqrt(),
            err_penalty: err.penalty_sq.sqrt(),
            eoc: None,
            iters: s.iterations,
        });
    }
    let mut report = ConvergenceReport { case: case.name.clone(), regime: case.regime(), gamma, rows };
    report.compute_eoc();
    levels.truncate(config.levels);
    Ok(ConvergenceOutcome { report, levels })
}

/// One property of the diagnostic battery.
#[derive(Clone, Debug, PartialEq)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Measured quantity.
    pub value: f64,
    /// What the measured quantity is compared with.
    pub requirement: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsReport {
    pub num_dofs: usize,
    pub delta: i32,
    pub gamma: Option<f64>,
    pub checks: Vec<PropertyCheck>,
}

impl DiagnosticsReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for DiagnosticsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let gamma = self.gamma.map_or("calibration failed".to_string(), |g| format!("{g}"));
        writeln!(f, "{} dofs, delta {}, gamma {}", self.num_dofs, self.delta, gamma)?;
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{status} {:<22} {:>14.6e}  ({})", c.name, c.value, c.requirement)?;
        }
        Ok(())
    }
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Largest `|P d(p) - c|` over the monomial coefficient vectors `c` and all elements.
pub fn projector_reproduction_error(disc: &Discretization) -> f64 {
    let mut worst: f64 = 0.0;
    for l in &disc.locals {
        for c in [Vector3::x(), Vector3::y(), Vector3::z(), Vector3::new(0.7, -1.3, 2.1)] {
            let d = l.projector.dofs_of(&c);
            worst = worst.max((l.projector.apply(d.as_slice()) - c).amax());
        }
    }
    worst
}

/// Largest `|a_h^K(p, v) - a^K(p, v)| / (1 + |a^K(p, v)|)` for linear `p` and random
/// local `v`, with the right side integrated by quadrature against `Π v`.
pub fn k_consistency_error(disc: &Discretization, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let pts = square_points(&GaussRule::new(4));
    let mut worst: f64 = 0.0;
    for (k, l) in disc.locals.iter().enumerate() {
        let el = &disc.mesh.elements[k];
        let det = el.affine_map.determinant().abs();
        for _ in 0..samples {
            let v = nalgebra::DVector::from_vec(random_vec(l.projector.num_dofs(), rng));
            let pv = l.projector.project(v.as_slice());
            for c in [Vector3::x(), Vector3::y(), Vector3::z()] {
                let lhs = (l.projector.dofs_of(&c).transpose() * &l.forms.a_h * &v)[(0, 0)];
                let p = l.projector.basis.polynomial(c);
                let rhs: f64 = pts
                    .iter()
                    .map(|&(xi, eta, w)| {
                        let x = el.affine_map.apply(xi, eta);
                        w * det * (p.gradient().dot(&pv.gradient()) + p.value(x) * pv.value(x))
                    })
                    .sum();
                worst = worst.max((lhs - rhs).abs() / (1.0 + rhs.abs()));
            }
        }
    }
    worst
}

/// Runs the property battery on level 0 of the configured family.
pub fn run_diagnostics(config: &ExperimentConfig) -> Result<DiagnosticsReport, ExperimentError> {
    config.validate()?;
    let mesh = config.family.mesh(0).map_err(at(0))?;
    run_diagnostics_on(mesh, config.delta, config.gamma, config.seed)
}

/// Runs the property battery on a given mesh.
pub fn run_diagnostics_on(
    mesh: PolygonalMesh,
    delta: i32,
    gamma: GammaSetting,
    seed: u64,
) -> Result<DiagnosticsReport, ExperimentError> {
    let disc = Discretization::new(mesh).map_err(at(0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let e = projector_reproduction_error(&disc);
    checks.push(PropertyCheck { name: "projector_p1", passed: e <= 1e-13, value: e, requirement: "<= 1e-13".into() });
    let e = k_consistency_error(&disc, 5, &mut rng);
    checks.push(PropertyCheck { name: "k_consistency", passed: e <= 1e-12, value: e, requirement: "<= 1e-12".into() });

    let mut jump: f64 = 0.0;
    for _ in 0..50 {
        let mut random_p1 = || -> Vec<_> {
            disc.locals
                .iter()
                .map(|l| l.projector.basis.polynomial(Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0))))
                .collect()
        };
        let (v, w) = (random_p1(), random_p1());
        let (lhs, rhs) = jump_identity_sides(&disc.mesh, &v, &w);
        jump = jump.max((lhs - rhs).abs());
    }
    checks.push(PropertyCheck { name: "jump_identity", passed: jump <= 1e-12, value: jump, requirement: "<= 1e-12".into() });

    let norm = disc.norm_matrix().map_err(at(0))?;
    let n = disc.num_dofs();
    let mut pi_bound: f64 = 0.0;
    for _ in 0..200 {
        let w = random_vec(n, &mut rng);
        let pw = disc.project_dofs(&w);
        pi_bound = pi_bound.max((norm.bilinear(&pw, &pw) / norm.bilinear(&w, &w)).sqrt());
    }
    checks.push(PropertyCheck {
        name: "pi_boundedness",
        passed: pi_bound.is_finite() && pi_bound < 10.0,
        value: pi_bound,
        requirement: "max |Pi v| / |v| < 10".into(),
    });

    let gamma = match gamma {
        GammaSetting::Fixed(g) => Some(g),
        GammaSetting::Auto => calibrate_gamma(&disc, delta, 10.0, 1e-3, 200, seed).ok().map(|c| c.gamma),
    };
    match gamma {
        Some(g) => {
            let b = BhParts::new(&disc).map_err(at(0))?.combine(delta, g).map_err(at(0))?;
            let sampled = sampled_coercivity(&b, &norm, 200, &mut ChaCha8Rng::seed_from_u64(seed));
            checks.push(PropertyCheck {
                name: "coercivity_sampled",
                passed: sampled >= 1e-3,
                value: sampled,
                requirement: "min Rayleigh quotient over 200 samples >= 1e-3".into(),
            });
            if n <= EXACT_COERCIVITY_LIMIT {
                let exact = exact_coercivity(&b, &norm).unwrap_or(f64::NAN);
                checks.push(PropertyCheck {
                    name: "coercivity_exact",
                    passed: exact >= 1e-3,
                    value: exact,
                    requirement: "smallest generalized eigenvalue >= 1e-3".into(),
                });
            }
            let mut cont: f64 = 0.0;
            for _ in 0..200 {
                let v = random_vec(n, &mut rng);
                let w = random_vec(n, &mut rng);
                let q = b.bilinear(&w, &v).abs() / (norm.bilinear(&v, &v) * norm.bilinear(&w, &w)).sqrt();
                cont = cont.max(q);
            }
            checks.push(PropertyCheck {
                name: "continuity",
                passed: cont.is_finite(),
                value: cont,
                requirement: "max |B(v,w)| / (|v| |w|) finite".into(),
            });
        }
        None => checks.push(PropertyCheck {
            name: "coercivity_sampled",
            passed: false,
            value: f64::NAN,
            requirement: "penalty calibration failed".into(),
        }),
    }
    Ok(DiagnosticsReport { num_dofs: n, delta, gamma, checks })
}

/// `‖v‖_{1,DG}` of the difference of two dof vectors on one discretization.
pub fn dof_distance(disc: &Discretization, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    broken_norms(disc, None, Some(&d)).norm_1dg()
}

/// Maximum of `|trace|` of `v` over the friction carrier points.
pub fn max_gamma2_trace(system: &GlobalSystem, v: &[f64]) -> f64 {
    norm_inf(&system.friction.trace_values(v))
}
