//! Global discontinuous system: dof numbering, traces, jumps and averages on
//! interface segments, the form `B_h`, the load `f_h` and the friction
//! functional on `Γ₂`.

use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{LinalgError, SparseMatrix, TripletBuilder};
use crate::mesh::{BoundaryTag, InterfaceSegment, Point, PolygonalMesh, Side};
use crate::quadrature::{square_points, GaussRule};
use crate::vem_local::{build_all, LocalElement, ScaledLinear, VemError};

#[derive(Debug, Error)]
pub enum DgError {
    #[error(transparent)]
    Vem(#[from] VemError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("segment {segment} does not lie on edge {edge} of element {element}")]
    SegmentOffElement { segment: usize, element: usize, edge: usize },
    #[error("delta must be -1, 0 or 1, got {0}")]
    InvalidDelta(i32),
    #[error("penalty parameter must be positive and finite, got {0}")]
    InvalidGamma(f64),
    #[error("friction bound must be positive and finite, got {0}")]
    InvalidFrictionBound(f64),
    #[error("multiplier bound violated: max |lambda| = {0}")]
    MultiplierBound(f64),
    #[error("no penalty parameter up to {max_gamma} reached the coercivity floor {floor}")]
    Calibration { max_gamma: f64, floor: f64 },
}

/// Element-local dof numbering; no dof is shared between elements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DofMap {
    offsets: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &PolygonalMesh) -> Self {
        let mut offsets = Vec::with_capacity(mesh.num_elements() + 1);
        offsets.push(0);
        for el in &mesh.elements {
            offsets.push(offsets.last().unwrap() + el.num_vertices());
        }
        DofMap { offsets }
    }

    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dofs(&self, element: usize) -> std::ops::Range<usize> {
        self.offsets[element]..self.offsets[element + 1]
    }

    pub fn global(&self, element: usize, local: usize) -> usize {
        self.offsets[element] + local
    }
}

/// A linear function on a segment, given by its values at the segment start and end.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearTrace {
    pub start: f64,
    pub end: f64,
}

impl LinearTrace {
    pub fn at(&self, t: f64) -> f64 {
        self.start * (1.0 - t) + self.end * t
    }

    pub fn mean(&self) -> f64 {
        0.5 * (self.start + self.end)
    }
}

/// How the two endpoint dofs of an element edge produce the trace on a segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SideTrace {
    pub element: usize,
    /// Global indices of the edge's start and end vertex dofs.
    pub dofs: [usize; 2],
    /// `coeffs[p][a]`: weight of `dofs[a]` in the trace value at segment point `p`
    /// (0 = start, 1 = end).
    pub coeffs: [[f64; 2]; 2],
}

impl SideTrace {
    pub fn evaluate(&self, v: &[f64]) -> LinearTrace {
        let c = &self.coeffs;
        LinearTrace {
            start: c[0][0] * v[self.dofs[0]] + c[0][1] * v[self.dofs[1]],
            end: c[1][0] * v[self.dofs[0]] + c[1][1] * v[self.dofs[1]],
        }
    }

    /// Trace of the global basis function attached to `dofs[a]`.
    pub fn basis(&self, a: usize) -> LinearTrace {
        LinearTrace { start: self.coeffs[0][a], end: self.coeffs[1][a] }
    }
}

/// Restriction of the edgewise linear trace of an element to a (possibly partial) segment.
pub fn trace_on_segment(
    mesh: &PolygonalMesh,
    dofmap: &DofMap,
    side: Side,
    segment: &InterfaceSegment,
) -> Result<SideTrace, DgError> {
    let el = &mesh.elements[side.element];
    let (a, b) = el.edge(side.local_edge, &mesh.vertices);
    let d = b - a;
    let len2 = d.norm_squared();
    let tol = mesh.tolerance();
    let off = || DgError::SegmentOffElement { segment: segment.id, element: side.element, edge: side.local_edge };
    let mut coeffs = [[0.0; 2]; 2];
    for (row, p) in [segment.start, segment.end].into_iter().enumerate() {
        let s = (p - a).dot(&d) / len2;
        let dist = ((p - a) - d * s).norm();
        if dist > tol || s < -tol || s > 1.0 + tol {
            return Err(off());
        }
        let s = s.clamp(0.0, 1.0);
        coeffs[row] = [1.0 - s, s];
    }
    let n = el.num_vertices();
    Ok(SideTrace {
        element: side.element,
        dofs: [dofmap.global(side.element, side.local_edge), dofmap.global(side.element, (side.local_edge + 1) % n)],
        coeffs,
    })
}

/// Traces of both sides of one segment; `minus` is absent on the boundary.
#[derive(Clone, Debug)]
pub struct SegmentTraces {
    pub plus: SideTrace,
    pub minus: Option<SideTrace>,
}

impl SegmentTraces {
    /// Sides with the sign of their normal relative to the segment normal.
    pub fn signed_sides(&self) -> impl Iterator<Item = (f64, &SideTrace)> {
        std::iter::once((1.0, &self.plus)).chain(self.minus.iter().map(|m| (-1.0, m)))
    }
}

/// Jump and average of a function on a segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpAverage {
    /// Scalar jump `v⁺ - v⁻` (or `v` on the boundary); the vector jump is this times `n`.
    pub scalar_jump: LinearTrace,
    pub normal: Vector2<f64>,
    /// Average of the projected gradients.
    pub average: Vector2<f64>,
}

impl JumpAverage {
    /// Vector jump `[v]` at parameter `t`.
    pub fn jump_at(&self, t: f64) -> Vector2<f64> {
        self.normal * self.scalar_jump.at(t)
    }
}

pub fn jump_and_average(
    segment: &InterfaceSegment,
    plus: LinearTrace,
    minus: Option<LinearTrace>,
    grad_plus: Vector2<f64>,
    grad_minus: Option<Vector2<f64>>,
) -> JumpAverage {
    match (minus, grad_minus) {
        (Some(m), Some(gm)) => JumpAverage {
            scalar_jump: LinearTrace { start: plus.start - m.start, end: plus.end - m.end },
            normal: segment.normal,
            average: (grad_plus + gm) * 0.5,
        },
        _ => JumpAverage { scalar_jump: plus, normal: segment.normal, average: grad_plus },
    }
}

/// `∫_0^1 p q dt` for two linear functions.
fn product_integral(p: LinearTrace, q: LinearTrace) -> f64 {
    p.start * q.start / 3.0 + (p.start * q.end + p.end * q.start) / 6.0 + p.end * q.end / 3.0
}

/// Mesh, dof numbering, local operators and segment traces.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub mesh: PolygonalMesh,
    pub dofmap: DofMap,
    pub locals: Vec<LocalElement>,
    pub traces: Vec<SegmentTraces>,
}

impl Discretization {
    pub fn new(mesh: PolygonalMesh) -> Result<Self, DgError> {
        let dofmap = DofMap::new(&mesh);
        let locals = build_all(&mesh)?;
        let traces = mesh
            .segments
            .iter()
            .map(|s| {
                Ok(SegmentTraces {
                    plus: trace_on_segment(&mesh, &dofmap, s.plus, s)?,
                    minus: s.minus.map(|m| trace_on_segment(&mesh, &dofmap, m, s)).transpose()?,
                })
            })
            .collect::<Result<Vec<_>, DgError>>()?;
        Ok(Discretization { mesh, dofmap, locals, traces })
    }

    pub fn num_dofs(&self) -> usize {
        self.dofmap.len()
    }

    pub fn local_slice<'a>(&self, element: usize, v: &'a [f64]) -> &'a [f64] {
        &v[self.dofmap.dofs(element)]
    }

    /// Per-element `Π v`.
    pub fn project(&self, v: &[f64]) -> Vec<ScaledLinear> {
        self.locals
            .iter()
            .enumerate()
            .map(|(k, l)| l.projector.project(self.local_slice(k, v)))
            .collect()
    }

    /// Dof vector of the vertex values of `Π v`.
    pub fn project_dofs(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (k, l) in self.locals.iter().enumerate() {
            let c = l.projector.apply(self.local_slice(k, v));
            let vals = l.projector.dofs_of(&c);
            for (i, g) in self.dofmap.dofs(k).enumerate() {
                out[g] = vals[i];
            }
        }
        out
    }

    /// Jump and average of a dof vector on a segment.
    pub fn jump_of(&self, segment: usize, v: &[f64]) -> JumpAverage {
        let s = &self.mesh.segments[segment];
        let t = &self.traces[segment];
        let grad = |k: usize| self.locals[k].projector.project(self.local_slice(k, v)).gradient();
        jump_and_average(
            s,
            t.plus.evaluate(v),
            t.minus.as_ref().map(|m| m.evaluate(v)),
            grad(t.plus.element),
            t.minus.as_ref().map(|m| grad(m.element)),
        )
    }

    /// Block-diagonal `Σ_K A_h^K`.
    pub fn assemble_a(&self) -> Result<SparseMatrix, DgError> {
        self.block(|l| &l.forms.a_h)
    }

    /// Block-diagonal `Σ_K A_pi^K`.
    pub fn assemble_a_pi(&self) -> Result<SparseMatrix, DgError> {
        self.block(|l| &l.forms.a_pi)
    }

    fn block(&self, pick: impl Fn(&LocalElement) -> &DMatrix<f64>) -> Result<SparseMatrix, DgError> {
        let n = self.num_dofs();
        let mut b = TripletBuilder::new(n, n);
        for (k, l) in self.locals.iter().enumerate() {
            let idx: Vec<usize> = self.dofmap.dofs(k).collect();
            b.add_dense(&idx, &idx, pick(l));
        }
        Ok(b.build()?)
    }

    /// `E(i, j) = Σ_{e internal} ∫_e {∇Πφ_j}·[φ_i] ds`.
    pub fn assemble_e(&self) -> Result<SparseMatrix, DgError> {
        let n = self.num_dofs();
        let mut b = TripletBuilder::new(n, n);
        for (s, t) in self.mesh.segments.iter().zip(&self.traces) {
            if !s.is_internal() {
                continue;
            }
            let mut cols: Vec<(usize, f64)> = Vec::with_capacity(8);
            for (_, side) in t.signed_sides() {
                let k = side.element;
                for (a, g) in self.locals[k].projector.basis_gradients().into_iter().enumerate() {
                    cols.push((self.dofmap.global(k, a), 0.5 * g.dot(&s.normal)));
                }
            }
            for (sign, side) in t.signed_sides() {
                for a in 0..2 {
                    let jump = sign * s.length * side.basis(a).mean();
                    for &(j, avg) in &cols {
                        b.push(side.dofs[a], j, jump * avg);
                    }
                }
            }
        }
        Ok(b.build()?)
    }

    /// `J(i, j) = Σ_e (1/|e|) ∫_e [φ_i]·[φ_j] ds` over all segments.
    pub fn assemble_j(&self) -> Result<SparseMatrix, DgError> {
        let n = self.num_dofs();
        let mut b = TripletBuilder::new(n, n);
        for t in &self.traces {
            for (si, p) in t.signed_sides() {
                for (sj, q) in t.signed_sides() {
                    for a in 0..2 {
                        for c in 0..2 {
                            b.push(p.dofs[a], q.dofs[c], si * sj * product_integral(p.basis(a), q.basis(c)));
                        }
                    }
                }
            }
        }
        Ok(b.build()?)
    }

    /// Gram matrix of `‖·‖²_{1,DG}`: volume part through `Π`, jump part on the traces.
    pub fn norm_matrix(&self) -> Result<SparseMatrix, DgError> {
        Ok(self.assemble_a_pi()?.add_scaled(1.0, &self.assemble_j()?))
    }

    /// `F(i) = Σ_K ∫_K f Πφ_i dx` with tensor Gauss quadrature of the given order.
    pub fn assemble_fh(&self, f: &dyn Fn(Point) -> f64, order: usize) -> Vec<f64> {
        let pts = square_points(&GaussRule::new(order));
        let mut out = vec![0.0; self.num_dofs()];
        for (k, l) in self.locals.iter().enumerate() {
            let el = &self.mesh.elements[k];
            let det = el.affine_map.determinant().abs();
            let basis = &l.projector.basis;
            let mut moments = nalgebra::Vector3::zeros();
            for &(xi, eta, w) in &pts {
                let x = el.affine_map.apply(xi, eta);
                moments += basis.values(x) * (w * det * f(x));
            }
            let local = l.projector.p.transpose() * DVector::from_column_slice(moments.as_slice());
            for (i, g) in self.dofmap.dofs(k).enumerate() {
                out[g] = local[i];
            }
        }
        out
    }

    pub fn friction_data(&self, g: f64, order: usize) -> Result<FrictionData, DgError> {
        if !(g > 0.0 && g.is_finite()) {
            return Err(DgError::InvalidFrictionBound(g));
        }
        let rule = GaussRule::new(order);
        let edges = self
            .mesh
            .segments
            .iter()
            .zip(&self.traces)
            .filter(|(s, _)| s.tag == Some(BoundaryTag::Gamma2))
            .map(|(s, t)| FrictionEdge {
                segment: s.id,
                length: s.length,
                trace: t.plus,
                nodes: rule.nodes.clone(),
                weights: rule.weights.iter().map(|w| w * s.length).collect(),
            })
            .collect();
        Ok(FrictionData { g, edges })
    }
}

/// One `Γ₂` segment with its trace map and quadrature points for the multiplier.
#[derive(Clone, Debug)]
pub struct FrictionEdge {
    pub segment: usize,
    pub length: f64,
    pub trace: SideTrace,
    /// Gauss nodes on `[0, 1]`.
    pub nodes: Vec<f64>,
    /// Gauss weights scaled by the segment length.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct FrictionData {
    pub g: f64,
    pub edges: Vec<FrictionEdge>,
}

impl FrictionData {
    /// Number of multiplier carrier points.
    pub fn num_points(&self) -> usize {
        self.edges.iter().map(|e| e.nodes.len()).sum()
    }

    /// Trace values of `v` at every carrier point, edge by edge.
    pub fn trace_values(&self, v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_points());
        for e in &self.edges {
            let tr = e.trace.evaluate(v);
            out.extend(e.nodes.iter().map(|&t| tr.at(t)));
        }
        out
    }

    /// `g Tᵀ W λ`: the functional `v ↦ ∫_{Γ₂} g λ v ds` as a dof vector.
    pub fn functional(&self, lambda: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        let mut q = 0;
        for e in &self.edges {
            for (&t, &w) in e.nodes.iter().zip(&e.weights) {
                let c = self.g * w * lambda[q];
                let basis = [(1.0 - t), t];
                for a in 0..2 {
                    let coeff = e.trace.coeffs[0][a] * basis[0] + e.trace.coeffs[1][a] * basis[1];
                    out[e.trace.dofs[a]] += c * coeff;
                }
                q += 1;
            }
        }
        out
    }

    pub fn weights(&self) -> Vec<f64> {
        self.edges.iter().flat_map(|e| e.weights.iter().copied()).collect()
    }

    pub fn gamma2_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }
}

/// `j(v) = ∫_{Γ₂} g |v| ds`, integrated exactly on each linear segment trace.
pub fn friction_j(data: &FrictionData, v: &[f64]) -> f64 {
    data.edges.iter().map(|e| data.g * abs_integral(e.trace.evaluate(v), e.length)).sum()
}

/// `∫_e |p| ds` for a linear `p` on a segment of length `len`.
pub fn abs_integral(p: LinearTrace, len: f64) -> f64 {
    let (a, b) = (p.start, p.end);
    if a * b >= 0.0 {
        0.5 * len * (a.abs() + b.abs())
    } else {
        0.5 * len * (a * a + b * b) / (a.abs() + b.abs())
    }
}

/// `∫_{Γ₂} g λ v ds` with `λ` given at the carrier points.
pub fn friction_linear(data: &FrictionData, lambda: &[f64], v: &[f64]) -> Result<f64, DgError> {
    let max = lambda.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max > 1.0 {
        return Err(DgError::MultiplierBound(max));
    }
    let tr = data.trace_values(v);
    Ok(data.weights().iter().zip(lambda).zip(&tr).map(|((w, l), t)| data.g * w * l * t).sum())
}

/// The pieces of `B_h` kept apart for diagnostics.
#[derive(Clone, Debug)]
pub struct BhParts {
    pub a: SparseMatrix,
    pub e: SparseMatrix,
    pub j: SparseMatrix,
}

impl BhParts {
    pub fn new(disc: &Discretization) -> Result<Self, DgError> {
        Ok(BhParts { a: disc.assemble_a()?, e: disc.assemble_e()?, j: disc.assemble_j()? })
    }

    /// `B = A - E - δEᵀ + γJ`, so that `B_h(v, w) = wᵀ B v`.
    pub fn combine(&self, delta: i32, gamma: f64) -> Result<SparseMatrix, DgError> {
        check_parameters(delta, gamma)?;
        let et = self.e.transpose();
        Ok(self.a.add_scaled(-1.0, &self.e).add_scaled(-(delta as f64), &et).add_scaled(gamma, &self.j))
    }
}

pub fn check_parameters(delta: i32, gamma: f64) -> Result<(), DgError> {
    if !(-1..=1).contains(&delta) {
        return Err(DgError::InvalidDelta(delta));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(DgError::InvalidGamma(gamma));
    }
    Ok(())
}

pub fn assemble_bh(disc: &Discretization, delta: i32, gamma: f64) -> Result<SparseMatrix, DgError> {
    check_parameters(delta, gamma)?;
    BhParts::new(disc)?.combine(delta, gamma)
}

/// Assembled discrete problem.
#[derive(Clone, Debug)]
pub struct GlobalSystem {
    pub b: SparseMatrix,
    pub f: Vec<f64>,
    pub delta: i32,
    pub gamma: f64,
    pub friction: FrictionData,
}

impl GlobalSystem {
    pub fn new(
        disc: &Discretization,
        delta: i32,
        gamma: f64,
        f: &dyn Fn(Point) -> f64,
        g: f64,
    ) -> Result<Self, DgError> {
        let b = assemble_bh(disc, delta, gamma)?;
        Ok(GlobalSystem { b, f: disc.assemble_fh(f, 3), delta, gamma, friction: disc.friction_data(g, 4)? })
    }

    pub fn num_dofs(&self) -> usize {
        self.f.len()
    }

    /// `½ B_h(v, v) - ⟨f_h, v⟩ + j(v)`.
    pub fn energy(&self, v: &[f64]) -> f64 {
        0.5 * self.b.bilinear(v, v) - crate::linalg::dot(&self.f, v) + friction_j(&self.friction, v)
    }
}

/// Minimum of `vᵀBv / vᵀNv` over random vectors with entries uniform in `[-1, 1]`.
pub fn sampled_coercivity<R: Rng>(b: &SparseMatrix, norm: &SparseMatrix, samples: usize, rng: &mut R) -> f64 {
    let n = b.nrows();
    let mut min = f64::INFINITY;
    for _ in 0..samples {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q = b.bilinear(&v, &v) / norm.bilinear(&v, &v);
        min = min.min(q);
    }
    min
}

/// Smallest generalized eigenvalue of `sym(B)` against the norm matrix, which is the
/// infimum of the Rayleigh quotient. Dense, for small systems only.
pub fn exact_coercivity(b: &SparseMatrix, norm: &SparseMatrix) -> Option<f64> {
    let bd = b.to_dense();
    let sym = (&bd + bd.transpose()) * 0.5;
    let chol = norm.to_dense().cholesky()?;
    let l_inv = chol.l().try_inverse()?;
    let c = &l_inv * sym * l_inv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    Some(c.symmetric_eigenvalues().min())
}

/// Dof count up to which the dense exact check accompanies sampling.
pub const EXACT_COERCIVITY_LIMIT: usize = 1500;

#[derive(Clone, Debug, PartialEq)]
pub struct GammaCalibration {
    pub gamma: f64,
    pub sampled: f64,
    pub exact: Option<f64>,
}

/// Doubles `γ` from `start` until the coercivity estimate exceeds `floor`.
/// Every trial samples the same seeded vectors.
pub fn calibrate_gamma(
    disc: &Discretization,
    delta: i32,
    start: f64,
    floor: f64,
    samples: usize,
    seed: u64,
) -> Result<GammaCalibration, DgError> {
    let parts = BhParts::new(disc)?;
    let norm = disc.norm_matrix()?;
    let exact_ok = disc.num_dofs() <= EXACT_COERCIVITY_LIMIT;
    let mut gamma = start;
    let max_gamma = start * 2f64.powi(30);
    while gamma <= max_gamma {
        let b = parts.combine(delta, gamma)?;
        let sampled = sampled_coercivity(&b, &norm, samples, &mut ChaCha8Rng::seed_from_u64(seed));
        let exact = if exact_ok { exact_coercivity(&b, &norm) } else { None };
        if sampled > floor && exact.is_none_or(|e| e > floor) {
            return Ok(GammaCalibration { gamma, sampled, exact });
        }
        gamma *= 2.0;
    }
    Err(DgError::Calibration { max_gamma, floor })
}

/// Left and right sides of
/// `Σ_K ∫_∂K ∇v·n w ds = ⟨{∇v},[w]⟩_{𝓔_h} + Σ_{e internal} ∫_e [∇v]{w} ds`
/// for piecewise linear `v`, `w`; the left side is integrated edge by edge
/// over element boundaries, independently of the segment structure.
pub fn jump_identity_sides(mesh: &PolygonalMesh, v: &[ScaledLinear], w: &[ScaledLinear]) -> (f64, f64) {
    let rule = GaussRule::new(4);
    let mut lhs = 0.0;
    for (k, el) in mesh.elements.iter().enumerate() {
        for i in 0..el.num_vertices() {
            let (a, b) = el.edge(i, &mesh.vertices);
            let t = b - a;
            let n = Vector2::new(t.y, -t.x) / t.norm();
            let flux = v[k].gradient().dot(&n);
            for (x, wt) in rule.iter() {
                lhs += wt * t.norm() * flux * w[k].value(a + t * x);
            }
        }
    }
    let mut rhs = 0.0;
    for s in &mesh.segments {
        let p = s.plus.element;
        for (x, wt) in rule.iter() {
            let pt = s.point_at(x);
            let wq = wt * s.length;
            match s.minus {
                Some(m) => {
                    let m = m.element;
                    let avg = (v[p].gradient() + v[m].gradient()) * 0.5;
                    let jump_w = (w[p].value(pt) - w[m].value(pt)) * s.normal;
                    let jump_grad = (v[p].gradient() - v[m].gradient()).dot(&s.normal);
                    let avg_w = 0.5 * (w[p].value(pt) + w[m].value(pt));
                    rhs += wq * (avg.dot(&jump_w) + jump_grad * avg_w);
                }
                None => rhs += wq * v[p].gradient().dot(&(w[p].value(pt) * s.normal)),
            }
        }
    }
    (lhs, rhs)
}
