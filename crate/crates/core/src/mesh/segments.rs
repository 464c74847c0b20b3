use std::cmp::Ordering;

use super::{
    BoundaryRule, Element, InterfaceSegment, MeshError, Point, PolygonalMesh, Rectangle, Side, Vertex,
    GEOMETRIC_TOLERANCE,
};

/// Re-extracts the interface segments of a mesh from its elements.
pub fn extract_segments(mesh: &PolygonalMesh) -> Result<Vec<InterfaceSegment>, MeshError> {
    segments_from_elements(&mesh.vertices, &mesh.elements, &mesh.domain, &mesh.boundary_rule, mesh.h)
}

/// An element edge projected onto its supporting line.
#[derive(Clone, Copy, Debug)]
struct LineEdge {
    element: usize,
    local_edge: usize,
    /// Angle of the canonical line direction in (-π/2, π/2].
    angle: f64,
    /// Label of the cluster of parallel edges.
    direction: usize,
    /// Signed distance of the line from the origin.
    offset: f64,
    lo: f64,
    hi: f64,
    /// +1 if the edge runs along the canonical direction.
    orientation: i8,
}

pub(super) fn segments_from_elements(
    vertices: &[Vertex],
    elements: &[Element],
    domain: &Rectangle,
    rule: &BoundaryRule,
    h: f64,
) -> Result<Vec<InterfaceSegment>, MeshError> {
    let tol = GEOMETRIC_TOLERANCE * h;
    let mut edges = Vec::with_capacity(4 * elements.len());
    for el in elements {
        for i in 0..el.num_vertices() {
            let (a, b) = el.edge(i, vertices);
            let d = (b - a).normalize();
            let (dir, orientation) = if d.x < -1e-12 || (d.x.abs() <= 1e-12 && d.y < 0.0) {
                (-d, -1)
            } else {
                (d, 1)
            };
            let ta = dir.dot(&a);
            let tb = dir.dot(&b);
            edges.push(LineEdge {
                element: el.id,
                local_edge: i,
                angle: dir.y.atan2(dir.x),
                direction: 0,
                offset: dir.x * a.y - dir.y * a.x,
                lo: ta.min(tb),
                hi: ta.max(tb),
                orientation,
            });
        }
    }
    // cluster by direction first, then by offset within each direction
    edges.sort_by(|p, q| p.angle.partial_cmp(&q.angle).unwrap_or(Ordering::Equal));
    let mut begin = 0;
    while begin < edges.len() {
        let mut stop = begin + 1;
        while stop < edges.len() && edges[stop].angle - edges[stop - 1].angle <= 1e-10 {
            stop += 1;
        }
        edges[begin..stop].sort_by(|p, q| p.offset.partial_cmp(&q.offset).unwrap_or(Ordering::Equal));
        for e in &mut edges[begin..stop] {
            e.direction = begin;
        }
        begin = stop;
    }

    // overlaps of opposite edges, and the covered parts of every edge
    let mut internal: Vec<(LineEdge, LineEdge, f64, f64)> = Vec::new();
    let mut covered: Vec<Vec<(f64, f64)>> = vec![Vec::new(); edges.len()];

    let mut start = 0;
    while start < edges.len() {
        let mut end = start + 1;
        while end < edges.len()
            && edges[end].direction == edges[start].direction
            && edges[end].offset - edges[end - 1].offset <= tol
        {
            end += 1;
        }
        for i in start..end {
            for j in (i + 1)..end {
                let (p, q) = (edges[i], edges[j]);
                let lo = p.lo.max(q.lo);
                let hi = p.hi.min(q.hi);
                if hi - lo <= tol {
                    continue;
                }
                if p.orientation == q.orientation {
                    return Err(MeshError::OverlappingElements { first: p.element, second: q.element });
                }
                covered[i].push((lo, hi));
                covered[j].push((lo, hi));
                let (plus, minus) = if p.element < q.element { (p, q) } else { (q, p) };
                internal.push((plus, minus, lo, hi));
            }
        }
        start = end;
    }

    let mut out = Vec::with_capacity(internal.len() + edges.len() / 4);
    for (plus, minus, lo, hi) in internal {
        let (start, end) = endpoints_on_edge(&plus, lo, hi, vertices, elements, tol);
        out.push(make_segment(
            start,
            end,
            Side { element: plus.element, local_edge: plus.local_edge },
            Some(Side { element: minus.element, local_edge: minus.local_edge }),
            None,
            vertices,
            elements,
        ));
    }

    for (k, edge) in edges.iter().enumerate() {
        let pieces = &mut covered[k];
        pieces.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
        let mut cursor = edge.lo;
        let mut gaps = Vec::new();
        for &(lo, hi) in pieces.iter() {
            if lo < cursor - tol {
                return Err(MeshError::UnresolvedIntersection { element: edge.element, edge: edge.local_edge });
            }
            if lo - cursor > tol {
                gaps.push((cursor, lo));
            }
            cursor = cursor.max(hi);
        }
        if edge.hi - cursor > tol {
            gaps.push((cursor, edge.hi));
        }
        for (lo, hi) in gaps {
            let (start, end) = endpoints_on_edge(edge, lo, hi, vertices, elements, tol);
            let tag_start = domain.tag_of(start, rule, tol);
            let tag_mid = domain.tag_of((start + end) * 0.5, rule, tol);
            let tag_end = domain.tag_of(end, rule, tol);
            let tag = match (tag_start, tag_mid, tag_end) {
                (Some(_), Some(t), Some(_)) => t,
                _ => {
                    return Err(MeshError::BoundaryOffDomain { element: edge.element, edge: edge.local_edge });
                }
            };
            out.push(make_segment(
                start,
                end,
                Side { element: edge.element, local_edge: edge.local_edge },
                None,
                Some(tag),
                vertices,
                elements,
            ));
        }
    }

    out.sort_by(|a, b| {
        (a.plus.element, a.plus.local_edge)
            .cmp(&(b.plus.element, b.plus.local_edge))
            .then_with(|| {
                let (p0, _) = elements[a.plus.element].edge(a.plus.local_edge, vertices);
                (a.start - p0)
                    .norm()
                    .partial_cmp(&(b.start - p0).norm())
                    .unwrap_or(Ordering::Equal)
            })
    });
    for (id, s) in out.iter_mut().enumerate() {
        s.id = id;
    }
    Ok(out)
}

/// Endpoints of the sub-interval `[lo, hi]` of an edge, ordered along the
/// element's counterclockwise edge direction and snapped to the edge's
/// vertices when they coincide.
fn endpoints_on_edge(
    edge: &LineEdge,
    lo: f64,
    hi: f64,
    vertices: &[Vertex],
    elements: &[Element],
    tol: f64,
) -> (Point, Point) {
    let (a, b) = elements[edge.element].edge(edge.local_edge, vertices);
    let len = edge.hi - edge.lo;
    let at = |t: f64| -> Point {
        // parameter along a -> b
        let s = if edge.orientation > 0 { (t - edge.lo) / len } else { (edge.hi - t) / len };
        if s * len <= tol {
            a
        } else if (1.0 - s) * len <= tol {
            b
        } else {
            a + (b - a) * s
        }
    };
    if edge.orientation > 0 {
        (at(lo), at(hi))
    } else {
        (at(hi), at(lo))
    }
}

fn make_segment(
    start: Point,
    end: Point,
    plus: Side,
    minus: Option<Side>,
    tag: Option<super::BoundaryTag>,
    vertices: &[Vertex],
    elements: &[Element],
) -> InterfaceSegment {
    let (a, b) = elements[plus.element].edge(plus.local_edge, vertices);
    let d = (b - a).normalize();
    InterfaceSegment {
        id: 0,
        start,
        end,
        length: (end - start).norm(),
        plus,
        minus,
        // outward for a counterclockwise polygon
        normal: Point::new(d.y, -d.x),
        tag,
    }
}
