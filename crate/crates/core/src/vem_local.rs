//! Lowest-order local virtual element space on a parallelogram.
//!
//! Degrees of freedom are the vertex values. Every computable quantity goes
//! through the projector onto `P1`, built from boundary integrals only: the
//! gradient equations are integrated by parts (`Δp = 0` for linear `p`) and
//! the constant mode is fixed by matching the boundary mean. On this space the
//! same projector is also the `L2(K)` projection, so interior moments against
//! linear polynomials are available as well.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::mesh::{Element, Point, PolygonalMesh};

#[derive(Debug, Error)]
pub enum VemError {
    #[error("projector of element {element} is singular (degenerate element)")]
    SingularProjector { element: usize },
}

/// A linear polynomial written in the scaled monomials of one element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledLinear {
    pub center: Point,
    pub scale: f64,
    /// Coefficients of `1`, `(x - x_K)/h_K`, `(y - y_K)/h_K`.
    pub coeffs: Vector3<f64>,
}

impl ScaledLinear {
    pub fn value(&self, p: Point) -> f64 {
        let s = (p - self.center) / self.scale;
        self.coeffs[0] + self.coeffs[1] * s.x + self.coeffs[2] * s.y
    }

    pub fn gradient(&self) -> Vector2<f64> {
        Vector2::new(self.coeffs[1], self.coeffs[2]) / self.scale
    }
}

/// Scaled monomials `1, (x - x_K)/h_K, (y - y_K)/h_K` with their exact moments.
#[derive(Clone, Debug)]
pub struct MonomialBasis {
    pub element: usize,
    pub center: Point,
    pub scale: f64,
    pub area: f64,
    /// `∫_K m_i m_j dx`.
    pub mass: Matrix3<f64>,
    /// `∫_K ∇m_i · ∇m_j dx`.
    pub stiffness: Matrix3<f64>,
}

impl MonomialBasis {
    pub fn new(element: &Element) -> Self {
        let map = &element.affine_map;
        let h = element.diameter;
        let c = element.barycenter;
        // each monomial composed with the affine map is affine on the reference square:
        // m(F(ξ, η)) = a0 + a1 ξ + a2 η
        let composed = [
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(
                (map.translation.x - c.x) / h,
                map.matrix[(0, 0)] / h,
                map.matrix[(0, 1)] / h,
            ),
            Vector3::new(
                (map.translation.y - c.y) / h,
                map.matrix[(1, 0)] / h,
                map.matrix[(1, 1)] / h,
            ),
        ];
        let det = map.determinant().abs();
        let mut mass = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                mass[(i, j)] = det * unit_square_product(&composed[i], &composed[j]);
            }
        }
        let area = element.area;
        let mut stiffness = Matrix3::zeros();
        stiffness[(1, 1)] = area / (h * h);
        stiffness[(2, 2)] = area / (h * h);
        MonomialBasis { element: element.id, center: c, scale: h, area, mass, stiffness }
    }

    pub fn values(&self, p: Point) -> Vector3<f64> {
        let s = (p - self.center) / self.scale;
        Vector3::new(1.0, s.x, s.y)
    }

    /// Gram matrix of `a^K(u, v) = ∫ ∇u·∇v + uv` on the monomials.
    pub fn energy(&self) -> Matrix3<f64> {
        self.stiffness + self.mass
    }

    pub fn polynomial(&self, coeffs: Vector3<f64>) -> ScaledLinear {
        ScaledLinear { center: self.center, scale: self.scale, coeffs }
    }
}

/// `∫_[0,1]² (a0 + a1 ξ + a2 η)(b0 + b1 ξ + b2 η) dξ dη`.
fn unit_square_product(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a[0] * b[0]
        + 0.5 * (a[0] * b[1] + a[1] * b[0])
        + 0.5 * (a[0] * b[2] + a[2] * b[0])
        + (a[1] * b[1] + a[2] * b[2]) / 3.0
        + 0.25 * (a[1] * b[2] + a[2] * b[1])
}

/// Projector from vertex values onto `P1`.
#[derive(Clone, Debug)]
pub struct LocalProjector {
    pub element: usize,
    pub basis: MonomialBasis,
    /// 3 × N: dof values to monomial coefficients of the projection.
    pub p: DMatrix<f64>,
    /// N × 3: monomial values at the vertices.
    pub d: DMatrix<f64>,
    pub vertices: Vec<Point>,
}

impl LocalProjector {
    pub fn num_dofs(&self) -> usize {
        self.vertices.len()
    }

    /// Coefficients of `Π v`.
    pub fn apply(&self, v: &[f64]) -> Vector3<f64> {
        let c = &self.p * DVector::from_column_slice(v);
        Vector3::new(c[0], c[1], c[2])
    }

    pub fn project(&self, v: &[f64]) -> ScaledLinear {
        self.basis.polynomial(self.apply(v))
    }

    /// `∇Π φ_i` for every local basis function.
    pub fn basis_gradients(&self) -> Vec<Vector2<f64>> {
        (0..self.num_dofs())
            .map(|i| Vector2::new(self.p[(1, i)], self.p[(2, i)]) / self.basis.scale)
            .collect()
    }

    /// Vertex values of a polynomial given by its monomial coefficients.
    pub fn dofs_of(&self, coeffs: &Vector3<f64>) -> DVector<f64> {
        &self.d * coeffs
    }
}

pub fn build_projector(element: &Element, mesh: &PolygonalMesh) -> Result<LocalProjector, VemError> {
    let basis = MonomialBasis::new(element);
    let pts = element.points(&mesh.vertices);
    let n = pts.len();

    let mut d = DMatrix::zeros(n, 3);
    for (i, &p) in pts.iter().enumerate() {
        d.row_mut(i).copy_from(&basis.values(p).transpose());
    }

    // edge lengths and outward normals, edge i runs from vertex i to i+1
    let edges: Vec<(f64, Vector2<f64>)> = (0..n)
        .map(|i| {
            let t = pts[(i + 1) % n] - pts[i];
            let len = t.norm();
            (len, Vector2::new(t.y, -t.x) / len)
        })
        .collect();

    let mut g = Matrix3::zeros();
    let mut b = DMatrix::zeros(3, n);
    // boundary mean: ∫_∂K Π v = ∫_∂K v, both sides exact by the trapezoidal rule
    for i in 0..n {
        let (len, _) = edges[i];
        let j = (i + 1) % n;
        let mi = basis.values(pts[i]);
        let mj = basis.values(pts[j]);
        for a in 0..3 {
            g[(0, a)] += 0.5 * len * (mi[a] + mj[a]);
        }
        b[(0, i)] += 0.5 * len;
        b[(0, j)] += 0.5 * len;
    }
    // gradient equations: (∇Π v, ∇m) = ∫_∂K v ∇m·n ds
    let grads = [Vector2::new(1.0, 0.0) / basis.scale, Vector2::new(0.0, 1.0) / basis.scale];
    for (row, gm) in grads.iter().enumerate() {
        let r = row + 1;
        g[(r, 1)] = basis.stiffness[(r, 1)];
        g[(r, 2)] = basis.stiffness[(r, 2)];
        for i in 0..n {
            let (len, normal) = edges[i];
            let flux = 0.5 * len * gm.dot(&normal);
            b[(r, i)] += flux;
            b[(r, (i + 1) % n)] += flux;
        }
    }
    let g_inv = g.try_inverse().ok_or(VemError::SingularProjector { element: element.id })?;
    let g_inv = DMatrix::from_iterator(3, 3, g_inv.iter().copied());
    let p = g_inv * b;
    if p.iter().any(|x| !x.is_finite()) {
        return Err(VemError::SingularProjector { element: element.id });
    }
    Ok(LocalProjector { element: element.id, basis, p, d, vertices: pts })
}

/// Scaled dof-dof stabilisation `σ_K (I - DP)ᵀ(I - DP)` with `σ_K = 1 + |K|`.
pub fn stabilization(element: &Element, proj: &LocalProjector) -> DMatrix<f64> {
    let n = proj.num_dofs();
    let sigma = 1.0 + element.area;
    let r = DMatrix::identity(n, n) - &proj.d * &proj.p;
    r.transpose() * r * sigma
}

#[derive(Clone, Debug)]
pub struct LocalForms {
    pub element: usize,
    /// `a^K(Π φ_j, Π φ_i)`.
    pub a_pi: DMatrix<f64>,
    pub s: DMatrix<f64>,
    /// `a_h^K = a_pi + s`.
    pub a_h: DMatrix<f64>,
    /// `(Π φ_j, Π φ_i)_{0,K}`.
    pub m_pi: DMatrix<f64>,
}

pub fn local_form(element: &Element, proj: &LocalProjector, s: DMatrix<f64>) -> LocalForms {
    debug_assert_eq!(element.id, proj.element);
    let energy = to_dynamic(&proj.basis.energy());
    let mass = to_dynamic(&proj.basis.mass);
    let pt = proj.p.transpose();
    let a_pi = &pt * energy * &proj.p;
    let m_pi = &pt * mass * &proj.p;
    let a_h = &a_pi + &s;
    LocalForms { element: element.id, a_pi, s, a_h, m_pi }
}

fn to_dynamic(m: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_iterator(3, 3, m.iter().copied())
}

/// `L2(K)` projection of a member of the local space onto `P1`; coincides with `Π`.
pub fn l2_project(proj: &LocalProjector, v: &[f64]) -> Vector3<f64> {
    proj.apply(v)
}

/// Projector, stabilisation and local forms of one element.
#[derive(Clone, Debug)]
pub struct LocalElement {
    pub projector: LocalProjector,
    pub forms: LocalForms,
}

/// Builds the local operators of every element of a mesh.
pub fn build_all(mesh: &PolygonalMesh) -> Result<Vec<LocalElement>, VemError> {
    mesh.elements
        .iter()
        .map(|el| {
            let projector = build_projector(el, mesh)?;
            let s = stabilization(el, &projector);
            let forms = local_form(el, &projector, s);
            Ok(LocalElement { projector, forms })
        })
        .collect()
}

/// Writes `P`, `D` and `A_h` of every element as plain numeric blocks.
pub fn dump_local<W: Write>(locals: &[LocalElement], mut w: W) -> std::io::Result<()> {
    let block = |w: &mut W, name: &str, m: &DMatrix<f64>| -> std::io::Result<()> {
        writeln!(w, "{name} {} {}", m.nrows(), m.ncols())?;
        for i in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.17e}", m[(i, j)])).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    };
    for l in locals {
        writeln!(w, "element {}", l.projector.element)?;
        block(&mut w, "P", &l.projector.p)?;
        block(&mut w, "D", &l.projector.d)?;
        block(&mut w, "A_h", &l.forms.a_h)?;
    }
    Ok(())
}
