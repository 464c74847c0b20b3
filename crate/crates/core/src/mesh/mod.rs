//! Polygonal meshes of affine-equivalent parallelogram elements.
//!
//! Elements never gain vertices when a neighbour is refined: a coarse edge
//! facing two fine edges keeps its two end vertices, and the non-conformity
//! is resolved on the level of [`InterfaceSegment`]s, the maximal straight
//! pieces shared by exactly two elements (or by one element and ∂Ω).

mod io;
mod segments;

use std::collections::{BTreeSet, HashMap};

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{read_mesh, write_mesh};
pub use segments::extract_segments;

pub type Point = Vector2<f64>;

/// Vertices of the reference element, the unit square.
pub const REFERENCE_SQUARE: [(f64, f64); 4] = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];

/// Relative tolerance for geometric coincidence, scaled by the mesh size.
pub const GEOMETRIC_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("degenerate domain: width {width}, height {height}")]
    DegenerateDomain { width: f64, height: f64 },
    #[error("number of subdivisions must be at least 1")]
    InvalidSubdivision,
    #[error("element {element} references unknown vertex {vertex}")]
    UnknownVertex { element: usize, vertex: usize },
    #[error("element {element} is not a parallelogram")]
    NotParallelogram { element: usize },
    #[error("element {element} is not counterclockwise or has zero area")]
    BadOrientation { element: usize },
    #[error("vertex {vertex} has non-finite coordinates")]
    NonFiniteVertex { vertex: usize },
    #[error("marked element {id} out of range (mesh has {count} elements)")]
    MarkedOutOfRange { id: usize, count: usize },
    #[error("elements {first} and {second} overlap along a shared edge line")]
    OverlappingElements { first: usize, second: usize },
    #[error("edge {edge} of element {element} is covered more than once")]
    UnresolvedIntersection { element: usize, edge: usize },
    #[error("uncovered part of edge {edge} of element {element} does not lie on the domain boundary")]
    BoundaryOffDomain { element: usize, edge: usize },
    #[error("element areas sum to {covered}, domain area is {expected}")]
    AreaMismatch { covered: f64, expected: f64 },
    #[error("mesh file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("stored segments do not match the segments extracted from the elements")]
    SegmentMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vertex {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

impl Vertex {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// `F(ξ) = translation + matrix · ξ`, mapping the reference square onto an element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineMap {
    pub matrix: Matrix2<f64>,
    pub translation: Point,
}

impl AffineMap {
    pub fn apply(&self, xi: f64, eta: f64) -> Point {
        self.translation + self.matrix * Vector2::new(xi, eta)
    }

    pub fn determinant(&self) -> f64 {
        self.matrix.determinant()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    pub id: usize,
    /// Counterclockwise vertex ids.
    pub vertex_ids: Vec<usize>,
    pub affine_map: AffineMap,
    /// Diameter `h_K`.
    pub diameter: f64,
    /// Radius of the largest inscribed disk `ρ_K`.
    pub inradius: f64,
    pub barycenter: Point,
    pub area: f64,
    /// Smallest distance between two vertices.
    pub min_vertex_distance: f64,
}

impl Element {
    /// Builds an element from counterclockwise parallelogram vertices.
    pub fn new(id: usize, vertex_ids: Vec<usize>, vertices: &[Vertex]) -> Result<Self, MeshError> {
        if vertex_ids.len() != 4 {
            return Err(MeshError::NotParallelogram { element: id });
        }
        let mut pts = [Point::zeros(); 4];
        for (p, &v) in pts.iter_mut().zip(&vertex_ids) {
            *p = vertices
                .get(v)
                .ok_or(MeshError::UnknownVertex { element: id, vertex: v })?
                .point();
        }
        let area = polygon_area(&pts);
        let mut diameter: f64 = 0.0;
        let mut min_dist = f64::INFINITY;
        for i in 0..4 {
            for j in (i + 1)..4 {
                let d = (pts[i] - pts[j]).norm();
                diameter = diameter.max(d);
                min_dist = min_dist.min(d);
            }
        }
        if !(area > 0.0) || area <= 1e-14 * diameter * diameter {
            return Err(MeshError::BadOrientation { element: id });
        }
        if (pts[0] + pts[2] - pts[1] - pts[3]).norm() > GEOMETRIC_TOLERANCE * diameter {
            return Err(MeshError::NotParallelogram { element: id });
        }
        let a = pts[1] - pts[0];
        let b = pts[3] - pts[0];
        let matrix = Matrix2::from_columns(&[a, b]);
        // heights of the parallelogram over its two side directions
        let inradius = 0.5 * (area / a.norm()).min(area / b.norm());
        let barycenter = (pts[0] + pts[1] + pts[2] + pts[3]) / 4.0;
        Ok(Element {
            id,
            vertex_ids,
            affine_map: AffineMap { matrix, translation: pts[0] },
            diameter,
            inradius,
            barycenter,
            area,
            min_vertex_distance: min_dist,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertex_ids.len()
    }

    /// Endpoints of local edge `i` (from vertex `i` to vertex `i + 1`).
    pub fn edge(&self, i: usize, vertices: &[Vertex]) -> (Point, Point) {
        let n = self.vertex_ids.len();
        (vertices[self.vertex_ids[i]].point(), vertices[self.vertex_ids[(i + 1) % n]].point())
    }

    pub fn points(&self, vertices: &[Vertex]) -> Vec<Point> {
        self.vertex_ids.iter().map(|&v| vertices[v].point()).collect()
    }
}

/// Signed area of a polygon (positive for counterclockwise order).
pub fn polygon_area(pts: &[Point]) -> f64 {
    let n = pts.len();
    let mut s = 0.0;
    for i in 0..n {
        let p = pts[i];
        let q = pts[(i + 1) % n];
        s += p.x * q.y - q.x * p.y;
    }
    0.5 * s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryTag {
    /// Homogeneous Neumann part Γ₁.
    #[serde(rename = "gamma1")]
    Gamma1,
    /// Friction part Γ₂.
    #[serde(rename = "gamma2")]
    Gamma2,
}

impl BoundaryTag {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryTag::Gamma1 => "gamma1",
            BoundaryTag::Gamma2 => "gamma2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gamma1" => Some(BoundaryTag::Gamma1),
            "gamma2" => Some(BoundaryTag::Gamma2),
            _ => None,
        }
    }
}

/// Assigns a boundary part to each side of the rectangular domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryRule {
    pub bottom: BoundaryTag,
    pub right: BoundaryTag,
    pub top: BoundaryTag,
    pub left: BoundaryTag,
}

impl Default for BoundaryRule {
    /// Bottom side is the friction boundary, the rest is Neumann.
    fn default() -> Self {
        BoundaryRule {
            bottom: BoundaryTag::Gamma2,
            right: BoundaryTag::Gamma1,
            top: BoundaryTag::Gamma1,
            left: BoundaryTag::Gamma1,
        }
    }
}

/// Axis-aligned rectangular domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rectangle {
    pub const UNIT: Rectangle = Rectangle { x0: 0.0, y0: 0.0, x1: 1.0, y1: 1.0 };

    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, MeshError> {
        let r = Rectangle { x0, y0, x1, y1 };
        if !(r.width() > 0.0 && r.height() > 0.0) || !r.width().is_finite() || !r.height().is_finite() {
            return Err(MeshError::DegenerateDomain { width: r.width(), height: r.height() });
        }
        Ok(r)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Boundary tag of a point lying on the rectangle boundary, if it does.
    fn tag_of(&self, p: Point, rule: &BoundaryRule, tol: f64) -> Option<BoundaryTag> {
        if (p.y - self.y0).abs() <= tol {
            Some(rule.bottom)
        } else if (p.x - self.x1).abs() <= tol {
            Some(rule.right)
        } else if (p.y - self.y1).abs() <= tol {
            Some(rule.top)
        } else if (p.x - self.x0).abs() <= tol {
            Some(rule.left)
        } else {
            None
        }
    }
}

/// One side of an interface segment: an element and one of its local edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Side {
    pub element: usize,
    pub local_edge: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentKind {
    Internal,
    Boundary,
}

/// Maximal straight piece of the mesh skeleton.
#[derive(Clone, Debug, PartialEq)]
pub struct InterfaceSegment {
    pub id: usize,
    /// Endpoints, ordered counterclockwise with respect to the plus element.
    pub start: Point,
    pub end: Point,
    pub length: f64,
    pub plus: Side,
    /// Absent on the boundary.
    pub minus: Option<Side>,
    /// Unit normal, outward from the plus element (and from Ω on the boundary).
    pub normal: Point,
    pub tag: Option<BoundaryTag>,
}

impl InterfaceSegment {
    pub fn kind(&self) -> SegmentKind {
        if self.minus.is_some() {
            SegmentKind::Internal
        } else {
            SegmentKind::Boundary
        }
    }

    pub fn is_internal(&self) -> bool {
        self.minus.is_some()
    }

    pub fn midpoint(&self) -> Point {
        (self.start + self.end) * 0.5
    }

    pub fn point_at(&self, t: f64) -> Point {
        self.start + (self.end - self.start) * t
    }
}

#[derive(Clone, Debug)]
pub struct PolygonalMesh {
    pub vertices: Vec<Vertex>,
    pub elements: Vec<Element>,
    pub segments: Vec<InterfaceSegment>,
    pub domain: Rectangle,
    pub boundary_rule: BoundaryRule,
    /// `max_K h_K`.
    pub h: f64,
    /// `min_K ρ_K / h_K`.
    pub gamma1: f64,
    /// `min_K` (smallest vertex distance) `/ h_K`.
    pub gamma2: f64,
}

impl PolygonalMesh {
    /// Builds elements, extracts segments and checks that the elements tile the domain.
    pub fn from_parts(
        domain: Rectangle,
        boundary_rule: BoundaryRule,
        vertices: Vec<Vertex>,
        element_vertices: Vec<Vec<usize>>,
    ) -> Result<Self, MeshError> {
        for v in &vertices {
            if !v.x.is_finite() || !v.y.is_finite() {
                return Err(MeshError::NonFiniteVertex { vertex: v.id });
            }
        }
        let elements = element_vertices
            .into_iter()
            .enumerate()
            .map(|(id, ids)| Element::new(id, ids, &vertices))
            .collect::<Result<Vec<_>, _>>()?;
        let covered: f64 = elements.iter().map(|e| e.area).sum();
        if (covered - domain.area()).abs() > 1e-10 * domain.area() {
            return Err(MeshError::AreaMismatch { covered, expected: domain.area() });
        }
        let h = elements.iter().map(|e| e.diameter).fold(0.0, f64::max);
        let gamma1 = elements.iter().map(|e| e.inradius / e.diameter).fold(f64::INFINITY, f64::min);
        let gamma2 = elements
            .iter()
            .map(|e| e.min_vertex_distance / e.diameter)
            .fold(f64::INFINITY, f64::min);
        let segments = segments::segments_from_elements(&vertices, &elements, &domain, &boundary_rule, h)?;
        Ok(PolygonalMesh { vertices, elements, segments, domain, boundary_rule, h, gamma1, gamma2 })
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn tolerance(&self) -> f64 {
        GEOMETRIC_TOLERANCE * self.h
    }

    pub fn internal_segments(&self) -> impl Iterator<Item = &InterfaceSegment> {
        self.segments.iter().filter(|s| s.is_internal())
    }

    pub fn boundary_segments(&self) -> impl Iterator<Item = &InterfaceSegment> {
        self.segments.iter().filter(|s| !s.is_internal())
    }

    pub fn element_points(&self, k: usize) -> Vec<Point> {
        self.elements[k].points(&self.vertices)
    }

    /// Ids of all segments touching element `k`.
    pub fn segments_of_element(&self, k: usize) -> Vec<usize> {
        self.segments
            .iter()
            .filter(|s| s.plus.element == k || s.minus.map(|m| m.element) == Some(k))
            .map(|s| s.id)
            .collect()
    }
}

/// Uniform `n × n` grid of congruent elements on a rectangle.
pub fn build_uniform(domain: Rectangle, n: usize, rule: BoundaryRule) -> Result<PolygonalMesh, MeshError> {
    build_uniform_rect(domain, n, n, rule)
}

/// Splits every marked element into four children through its edge midpoints.
///
/// Neighbours are left untouched: a coarse element adjacent to a refined one
/// keeps its four vertices and the new midpoint becomes a hanging node.
pub fn refine_local(mesh: &PolygonalMesh, marked: &BTreeSet<usize>) -> Result<PolygonalMesh, MeshError> {
    let count = mesh.elements.len();
    if let Some(&id) = marked.iter().find(|&&id| id >= count) {
        return Err(MeshError::MarkedOutOfRange { id, count });
    }
    let mut vertices = mesh.vertices.clone();
    let mut lookup: HashMap<(u64, u64), usize> =
        vertices.iter().map(|v| (point_key(v.point()), v.id)).collect();
    let mut vertex_at = |p: Point, vertices: &mut Vec<Vertex>| -> usize {
        *lookup.entry(point_key(p)).or_insert_with(|| {
            let id = vertices.len();
            vertices.push(Vertex { id, x: p.x, y: p.y });
            id
        })
    };
    let mut elements = Vec::with_capacity(count + 3 * marked.len());
    for el in &mesh.elements {
        if !marked.contains(&el.id) {
            elements.push(el.vertex_ids.clone());
            continue;
        }
        let p: Vec<Point> = el.points(&mesh.vertices);
        let v = &el.vertex_ids;
        let m01 = vertex_at((p[0] + p[1]) * 0.5, &mut vertices);
        let m12 = vertex_at((p[1] + p[2]) * 0.5, &mut vertices);
        let m23 = vertex_at((p[2] + p[3]) * 0.5, &mut vertices);
        let m30 = vertex_at((p[3] + p[0]) * 0.5, &mut vertices);
        let c = vertex_at((p[0] + p[1] + p[2] + p[3]) * 0.25, &mut vertices);
        // every child keeps the parent's orientation, so its affine map is the parent's scaled by 1/2
        elements.push(vec![v[0], m01, c, m30]);
        elements.push(vec![m01, v[1], m12, c]);
        elements.push(vec![c, m12, v[2], m23]);
        elements.push(vec![m30, c, m23, v[3]]);
    }
    PolygonalMesh::from_parts(mesh.domain, mesh.boundary_rule, vertices, elements)
}

/// Refines every element once.
pub fn refine_uniform(mesh: &PolygonalMesh) -> Result<PolygonalMesh, MeshError> {
    let all: BTreeSet<usize> = (0..mesh.num_elements()).collect();
    refine_local(mesh, &all)
}

fn point_key(p: Point) -> (u64, u64) {
    // normalise -0.0 so that equal coordinates share a key
    ((p.x + 0.0).to_bits(), (p.y + 0.0).to_bits())
}

/// The two-element configuration with one refined element: a `[0,2]×[0,1]`
/// strip of two unit squares whose left square is split into four, leaving a
/// hanging node at `(1, 1/2)` on the right square's left edge.
pub fn figure1_mesh(rule: BoundaryRule) -> Result<PolygonalMesh, MeshError> {
    let coarse = build_uniform_rect(Rectangle::new(0.0, 0.0, 2.0, 1.0)?, 2, 1, rule)?;
    refine_local(&coarse, &BTreeSet::from([0]))
}

/// Uniform `nx × ny` grid on a rectangle.
pub fn build_uniform_rect(
    domain: Rectangle,
    nx: usize,
    ny: usize,
    rule: BoundaryRule,
) -> Result<PolygonalMesh, MeshError> {
    let domain = Rectangle::new(domain.x0, domain.y0, domain.x1, domain.y1)?;
    if nx == 0 || ny == 0 {
        return Err(MeshError::InvalidSubdivision);
    }
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = domain.x0 + domain.width() * (i as f64) / (nx as f64);
            let y = domain.y0 + domain.height() * (j as f64) / (ny as f64);
            vertices.push(Vertex { id: vertices.len(), x, y });
        }
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut elements = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            elements.push(vec![idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    PolygonalMesh::from_parts(domain, rule, vertices, elements)
}

/// Lower bounds on the regularity constants below which a mesh is rejected.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularityFloors {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Default for RegularityFloors {
    fn default() -> Self {
        RegularityFloors { gamma1: 0.05, gamma2: 0.05 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularityReport {
    pub gamma1: f64,
    pub gamma2: f64,
    pub ok: bool,
}

/// Measures the inscribed-disk and vertex-distance constants of the mesh.
pub fn validate_regularity(mesh: &PolygonalMesh, floors: RegularityFloors) -> RegularityReport {
    RegularityReport {
        gamma1: mesh.gamma1,
        gamma2: mesh.gamma2,
        ok: mesh.gamma1 >= floors.gamma1 && mesh.gamma2 >= floors.gamma2,
    }
}
