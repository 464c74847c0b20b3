//! Broken norms, interpolants, the residual functional, errors against exact
//! solutions and estimated orders of convergence.
//!
//! Members of the virtual space are measured through their per-element
//! projection `Π v`; jumps on the segments use the linear dof traces.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{Matrix2, Vector2, Vector3};
use thiserror::Error;

use crate::dg_forms::{friction_j, Discretization, FrictionData};
use crate::mesh::{BoundaryRule, BoundaryTag, Element, Point, PolygonalMesh, Rectangle};
use crate::quadrature::{square_points, GaussRule};
use crate::vem_local::ScaledLinear;

/// Points per direction of the element and segment rules used for error integrals.
pub const ERROR_QUADRATURE: usize = 5;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("singular moment matrix on element {element}")]
    SingularMoments { element: usize },
    #[error("case `{0}` has no closed-form solution")]
    NoExactSolution(String),
    #[error("no element of the coarse mesh contains point ({x}, {y})")]
    PointLocation { x: f64, y: f64 },
}

/// Squared components of the broken norms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BrokenNorms {
    /// `Σ_K ‖∇v‖²_{0,K}`
    pub grad_sq: f64,
    /// `Σ_K ‖v‖²_{0,K}`
    pub l2_sq: f64,
    /// `Σ_K h_K² |∇v|²_{1,K}`
    pub hessian_sq: f64,
    /// `Σ_e (1/|e|) ‖[v]‖²_{0,e}` over all segments.
    pub penalty_sq: f64,
}

impl BrokenNorms {
    pub fn norm_1dg(&self) -> f64 {
        (self.grad_sq + self.l2_sq + self.penalty_sq).sqrt()
    }

    pub fn norm_2dg(&self) -> f64 {
        (self.grad_sq + self.l2_sq + self.hessian_sq + self.penalty_sq).sqrt()
    }
}

type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
type GradientFn = Arc<dyn Fn(Point) -> Vector2<f64> + Send + Sync>;
type HessianFn = Arc<dyn Fn(Point) -> Matrix2<f64> + Send + Sync>;

/// A closed-form function with its first and second derivatives.
#[derive(Clone)]
pub struct ExactFunction {
    pub value: ScalarFn,
    pub gradient: GradientFn,
    pub hessian: HessianFn,
}

impl std::fmt::Debug for ExactFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ExactFunction")
    }
}

impl ExactFunction {
    pub fn new(
        value: impl Fn(Point) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(Point) -> Vector2<f64> + Send + Sync + 'static,
        hessian: impl Fn(Point) -> Matrix2<f64> + Send + Sync + 'static,
    ) -> Self {
        ExactFunction { value: Arc::new(value), gradient: Arc::new(gradient), hessian: Arc::new(hessian) }
    }

    /// `a + b·x`, with vanishing Hessian.
    pub fn linear(a: f64, b: Vector2<f64>) -> Self {
        ExactFunction::new(move |p| a + b.dot(&p), move |_| b, |_| Matrix2::zeros())
    }

    pub fn laplacian(&self, p: Point) -> f64 {
        (self.hessian)(p).trace()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// Errors are measured against the closed-form solution.
    Analytic,
    /// Errors are measured against a discrete solution two levels finer.
    Reference,
}

/// Data of the continuous problem `-Δu + u = f` with friction bound `g` on `Γ₂`.
#[derive(Clone, Debug)]
pub struct ExactSolutionCase {
    pub name: String,
    pub domain: Rectangle,
    pub boundary_rule: BoundaryRule,
    pub g: f64,
    pub f: ScalarFnDebug,
    pub exact: Option<ExactFunction>,
}

/// Load function wrapper with a `Debug` impl.
#[derive(Clone)]
pub struct ScalarFnDebug(pub ScalarFn);

impl std::fmt::Debug for ScalarFnDebug {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ScalarFn")
    }
}

impl ExactSolutionCase {
    pub const NAMES: [&'static str; 3] = ["clamped", "cosine", "slip"];

    pub fn by_name(name: &str, domain: Rectangle, g: Option<f64>) -> Option<Self> {
        match name {
            "clamped" => Some(Self::clamped(domain, g.unwrap_or(2.0))),
            "cosine" => Some(Self::cosine(domain, g.unwrap_or(2.0))),
            "slip" => Some(Self::slip(domain, g.unwrap_or(1.0))),
            _ => None,
        }
    }

    /// Case with the given solution and `f = -Δu + u`.
    pub fn from_solution(name: &str, domain: Rectangle, g: f64, u: ExactFunction) -> Self {
        let uf = u.clone();
        let f = move |p: Point| -uf.laplacian(p) + (uf.value)(p);
        ExactSolutionCase {
            name: name.into(),
            domain,
            boundary_rule: BoundaryRule::default(),
            g,
            f: ScalarFnDebug(Arc::new(f)),
            exact: Some(u),
        }
    }

    /// Stick-regime solution `u = 16 X²(1-X)² Y(1-Y)²` in coordinates scaled to
    /// the domain. It vanishes on the whole boundary, has zero normal derivative
    /// on the sides and the top, and on the bottom `λ = -∂ₙu / g = 16X²(1-X)²/(gH)`,
    /// which is at most `1/(gH)`.
    pub fn clamped(domain: Rectangle, g: f64) -> Self {
        let (x0, y0, w, hgt) = (domain.x0, domain.y0, domain.width(), domain.height());
        let a = |x: f64| 16.0 * x * x * (1.0 - x) * (1.0 - x);
        let da = |x: f64| 32.0 * x * (1.0 - x) * (1.0 - 2.0 * x);
        let dda = |x: f64| 32.0 * (1.0 - 6.0 * x + 6.0 * x * x);
        let b = |y: f64| y * (1.0 - y) * (1.0 - y);
        let db = |y: f64| (1.0 - y) * (1.0 - 3.0 * y);
        let ddb = |y: f64| 6.0 * y - 4.0;
        let scaled = move |p: Point| ((p.x - x0) / w, (p.y - y0) / hgt);
        let u = ExactFunction::new(
            move |p| {
                let (x, y) = scaled(p);
                a(x) * b(y)
            },
            move |p| {
                let (x, y) = scaled(p);
                Vector2::new(da(x) * b(y) / w, a(x) * db(y) / hgt)
            },
            move |p| {
                let (x, y) = scaled(p);
                let xy = da(x) * db(y) / (w * hgt);
                Matrix2::new(dda(x) * b(y) / (w * w), xy, xy, a(x) * ddb(y) / (hgt * hgt))
            },
        );
        Self::from_solution("clamped", domain, g, u)
    }

    /// `u = cos(πX) Y(Y-1)²`. It does not vanish on the sides, where the penalty
    /// on boundary segments acts on `u` itself, so the discrete form is not
    /// consistent with this solution.
    pub fn cosine(domain: Rectangle, g: f64) -> Self {
        use std::f64::consts::PI;
        let (x0, y0, w, hgt) = (domain.x0, domain.y0, domain.width(), domain.height());
        let b = |y: f64| y * (y - 1.0) * (y - 1.0);
        let db = |y: f64| (y - 1.0) * (3.0 * y - 1.0);
        let ddb = |y: f64| 6.0 * y - 4.0;
        let scaled = move |p: Point| ((p.x - x0) / w, (p.y - y0) / hgt);
        let u = ExactFunction::new(
            move |p| {
                let (x, y) = scaled(p);
                (PI * x).cos() * b(y)
            },
            move |p| {
                let (x, y) = scaled(p);
                Vector2::new(-PI * (PI * x).sin() * b(y) / w, (PI * x).cos() * db(y) / hgt)
            },
            move |p| {
                let (x, y) = scaled(p);
                let xy = -PI * (PI * x).sin() * db(y) / (w * hgt);
                Matrix2::new(-PI * PI * (PI * x).cos() * b(y) / (w * w), xy, xy, (PI * x).cos() * ddb(y) / (hgt * hgt))
            },
        );
        Self::from_solution("cosine", domain, g, u)
    }

    /// Slip regime without a closed form: `f = 10 + 20x`.
    pub fn slip(domain: Rectangle, g: f64) -> Self {
        ExactSolutionCase {
            name: "slip".into(),
            domain,
            boundary_rule: BoundaryRule::default(),
            g,
            f: ScalarFnDebug(Arc::new(|p: Point| 10.0 + 20.0 * p.x)),
            exact: None,
        }
    }

    pub fn regime(&self) -> Regime {
        if self.exact.is_some() {
            Regime::Analytic
        } else {
            Regime::Reference
        }
    }

    pub fn load(&self, p: Point) -> f64 {
        (self.f.0)(p)
    }

    fn exact_or_err(&self) -> Result<&ExactFunction, AnalysisError> {
        self.exact.as_ref().ok_or_else(|| AnalysisError::NoExactSolution(self.name.clone()))
    }
}

/// Tensor Gauss points of an element as `(x, weight)`, exact for the affine image of `Q_{2n-1}`.
fn element_points(el: &Element, rule: &GaussRule) -> Vec<(Point, f64)> {
    let det = el.affine_map.determinant().abs();
    square_points(rule).into_iter().map(|(xi, eta, w)| (el.affine_map.apply(xi, eta), w * det)).collect()
}

/// Broken norms of `u - v_h`, where either part may be absent.
///
/// `u` enters through its values and derivatives at quadrature points, `v_h`
/// through `Π v_h` inside elements and its linear traces on segments.
pub fn broken_norms(disc: &Discretization, u: Option<&ExactFunction>, v: Option<&[f64]>) -> BrokenNorms {
    let rule = GaussRule::new(ERROR_QUADRATURE);
    let mesh = &disc.mesh;
    let proj: Option<Vec<ScaledLinear>> = v.map(|v| disc.project(v));
    let mut out = BrokenNorms::default();
    for (k, el) in mesh.elements.iter().enumerate() {
        let h2 = el.diameter * el.diameter;
        for (x, w) in element_points(el, &rule) {
            let (mut val, mut grad) = (0.0, Vector2::zeros());
            if let Some(u) = u {
                val += (u.value)(x);
                grad += (u.gradient)(x);
                out.hessian_sq += w * h2 * (u.hessian)(x).norm_squared();
            }
            if let Some(p) = &proj {
                val -= p[k].value(x);
                grad -= p[k].gradient();
            }
            out.l2_sq += w * val * val;
            out.grad_sq += w * grad.norm_squared();
        }
    }
    for (s, t) in mesh.segments.iter().zip(&disc.traces) {
        let mut acc = 0.0;
        for (tq, w) in rule.iter() {
            let x = s.point_at(tq);
            // on internal segments the jump of a continuous `u` vanishes
            let mut jump = if s.is_internal() { 0.0 } else { u.map_or(0.0, |u| (u.value)(x)) };
            if let Some(v) = v {
                for (sign, side) in t.signed_sides() {
                    jump -= sign * side.evaluate(v).at(tq);
                }
            }
            acc += w * jump * jump;
        }
        // weights on [0, 1] times |e|, divided by |e|
        out.penalty_sq += acc;
    }
    out
}

/// Broken norms of a dof vector.
pub fn norm_1dg(disc: &Discretization, v: &[f64]) -> BrokenNorms {
    broken_norms(disc, None, Some(v))
}

/// Broken norms of a closed-form function.
pub fn norm_1dg_exact(disc: &Discretization, u: &ExactFunction) -> BrokenNorms {
    broken_norms(disc, Some(u), None)
}

/// Vertex values of `u` on each element, in dof order.
pub fn interpolant_ui(disc: &Discretization, u: &dyn Fn(Point) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; disc.num_dofs()];
    for (k, el) in disc.mesh.elements.iter().enumerate() {
        for (i, p) in el.points(&disc.mesh.vertices).into_iter().enumerate() {
            out[disc.dofmap.global(k, i)] = u(p);
        }
    }
    out
}

/// Per-element `L²` projection of `u` onto linear polynomials.
pub fn projection_upi(disc: &Discretization, u: &dyn Fn(Point) -> f64) -> Result<Vec<ScaledLinear>, AnalysisError> {
    let rule = GaussRule::new(ERROR_QUADRATURE);
    disc.locals
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let basis = &l.projector.basis;
            let mut rhs = Vector3::zeros();
            for (x, w) in element_points(&disc.mesh.elements[k], &rule) {
                rhs += basis.values(x) * (w * u(x));
            }
            let coeffs = basis.mass.lu().solve(&rhs).ok_or(AnalysisError::SingularMoments { element: k })?;
            Ok(basis.polynomial(coeffs))
        })
        .collect()
}

/// `Σ_K ‖u - p_K‖²_{0,K}` and `Σ_K |u - p_K|²_{1,K}` for piecewise linear `p`.
pub fn piecewise_error(mesh: &PolygonalMesh, u: &ExactFunction, p: &[ScaledLinear]) -> (f64, f64) {
    let rule = GaussRule::new(ERROR_QUADRATURE);
    let (mut l2, mut h1) = (0.0, 0.0);
    for (k, el) in mesh.elements.iter().enumerate() {
        for (x, w) in element_points(el, &rule) {
            let e = (u.value)(x) - p[k].value(x);
            l2 += w * e * e;
            h1 += w * ((u.gradient)(x) - p[k].gradient()).norm_squared();
        }
    }
    (l2, h1)
}

/// `∫_{Γ₂} g |u| ds` by a composite Gauss rule on each friction segment.
pub fn exact_friction(mesh: &PolygonalMesh, u: &dyn Fn(Point) -> f64, g: f64) -> f64 {
    let rule = GaussRule::new(ERROR_QUADRATURE);
    let pieces = 16;
    let mut total = 0.0;
    for s in mesh.segments.iter().filter(|s| s.tag == Some(BoundaryTag::Gamma2)) {
        for piece in 0..pieces {
            for (t, w) in rule.iter() {
                let tau = (piece as f64 + t) / pieces as f64;
                total += g * w * s.length / pieces as f64 * u(s.point_at(tau)).abs();
            }
        }
    }
    total
}

/// `R(u, v) = ã(u, v-u) - ⟨∇u, [v-u]⟩_{internal} + j(v) - j(u) - (f, v-u)`.
///
/// Inside elements and in the internal jumps `v` is replaced by `Π v`; `j(v)`
/// uses the dof traces.
pub fn residual_r(
    disc: &Discretization,
    case: &ExactSolutionCase,
    friction: &FrictionData,
    v: &[f64],
) -> Result<f64, AnalysisError> {
    let u = case.exact_or_err()?;
    let rule = GaussRule::new(ERROR_QUADRATURE);
    let pv = disc.project(v);
    let mut r = 0.0;
    for (k, el) in disc.mesh.elements.iter().enumerate() {
        for (x, w) in element_points(el, &rule) {
            let d = pv[k].value(x) - (u.value)(x);
            let dg = pv[k].gradient() - (u.gradient)(x);
            r += w * ((u.gradient)(x).dot(&dg) + (u.value)(x) * d - case.load(x) * d);
        }
    }
    for s in disc.mesh.internal_segments() {
        let (p, m) = (s.plus.element, s.minus.expect("internal segment").element);
        for (t, w) in rule.iter() {
            let x = s.point_at(t);
            let jump = pv[p].value(x) - pv[m].value(x);
            r -= w * s.length * (u.gradient)(x).dot(&s.normal) * jump;
        }
    }
    r += friction_j(friction, v) - exact_friction(&disc.mesh, u.value.as_ref(), friction.g);
    Ok(r)
}

/// Broken norms of `u - u_h` for an analytic case.
pub fn error_against_exact(
    disc: &Discretization,
    case: &ExactSolutionCase,
    u_h: &[f64],
) -> Result<BrokenNorms, AnalysisError> {
    Ok(broken_norms(disc, Some(case.exact_or_err()?), Some(u_h)))
}

/// Transfers a dof vector to a nested finer mesh.
///
/// Fine vertices on the boundary of the containing coarse element take the
/// coarse linear trace; interior ones take `Π v`.
pub fn prolongate(coarse: &Discretization, v: &[f64], fine: &Discretization) -> Result<Vec<f64>, AnalysisError> {
    let cm = &coarse.mesh;
    let proj = coarse.project(v);
    let tol = cm.tolerance();
    let mut out = vec![0.0; fine.num_dofs()];
    for (kf, el) in fine.mesh.elements.iter().enumerate() {
        let kc = locate(cm, el.barycenter).ok_or(AnalysisError::PointLocation { x: el.barycenter.x, y: el.barycenter.y })?;
        for (i, p) in el.points(&fine.mesh.vertices).into_iter().enumerate() {
            let on_segment = cm.segments_of_element(kc).into_iter().find_map(|sid| {
                let s = &cm.segments[sid];
                let d = s.end - s.start;
                let t = (p - s.start).dot(&d) / d.norm_squared();
                let off = (s.start + d * t - p).norm();
                (off <= tol && (-1e-12..=1.0 + 1e-12).contains(&t)).then_some((sid, t))
            });
            let value = match on_segment {
                Some((sid, t)) => {
                    let tr = &coarse.traces[sid];
                    let side = if tr.plus.element == kc { &tr.plus } else { tr.minus.as_ref().expect("segment of element") };
                    side.evaluate(v).at(t)
                }
                None => proj[kc].value(p),
            };
            out[fine.dofmap.global(kf, i)] = value;
        }
    }
    Ok(out)
}

/// Index of an element containing `p`, by inverting the affine maps.
pub fn locate(mesh: &PolygonalMesh, p: Point) -> Option<usize> {
    let eps = 1e-10;
    mesh.elements.iter().position(|el| {
        let inv = match el.affine_map.matrix.try_inverse() {
            Some(m) => m,
            None => return false,
        };
        let r = inv * (p - el.affine_map.translation);
        (-eps..=1.0 + eps).contains(&r.x) && (-eps..=1.0 + eps).contains(&r.y)
    })
}

/// `log(e_i / e_{i+1}) / log(h_i / h_{i+1})`; `None` for the first level and
/// NaN where an error is not positive.
pub fn eoc(h: &[f64], e: &[f64]) -> Vec<Option<f64>> {
    assert_eq!(h.len(), e.len());
    (0..h.len())
        .map(|i| {
            if i == 0 {
                return None;
            }
            let (e0, e1) = (e[i - 1], e[i]);
            if !(e0 > 0.0 && e1 > 0.0 && e0.is_finite() && e1.is_finite()) {
                return Some(f64::NAN);
            }
            Some((e0 / e1).ln() / (h[i - 1] / h[i]).ln())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub level: usize,
    pub h: f64,
    pub n: usize,
    pub err_1dg: f64,
    pub err_grad: f64,
    pub err_l2: f64,
    pub err_penalty: f64,
    pub eoc: Option<f64>,
    pub iters: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub case: String,
    pub regime: Regime,
    pub gamma: f64,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    pub const HEADER: &'static str = "level,h,N,err_1dg,err_grad,err_l2,err_penalty,eoc,iters";

    /// Fills the `eoc` column from `h` and `err_1dg`.
    pub fn compute_eoc(&mut self) {
        let h: Vec<f64> = self.rows.iter().map(|r| r.h).collect();
        let e: Vec<f64> = self.rows.iter().map(|r| r.err_1dg).collect();
        for (r, x) in self.rows.iter_mut().zip(eoc(&h, &e)) {
            r.eoc = x;
        }
    }

    pub fn last_eoc(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.eoc)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for r in &self.rows {
            let eoc = match r.eoc {
                None => String::new(),
                Some(x) if x.is_nan() => "nan".into(),
                Some(x) => format!("{x:.14e}"),
            };
            writeln!(
                w,
                "{},{:.14e},{},{:.14e},{:.14e},{:.14e},{:.14e},{},{}",
                r.level, r.h, r.n, r.err_1dg, r.err_grad, r.err_l2, r.err_penalty, eoc, r.iters
            )?;
        }
        Ok(())
    }
}
