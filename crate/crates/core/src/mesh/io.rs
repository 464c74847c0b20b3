//! Plain-text mesh format.
//!
//! ```text
//! DVEM-MESH 1
//! domain <x0> <y0> <x1> <y1>
//! boundary bottom=<tag> right=<tag> top=<tag> left=<tag>
//! vertices <count>
//! <id> <x> <y>
//! elements <count>
//! <id> <k> <v0> ... <v_{k-1}>
//! segments <count>
//! <id> internal|boundary <tag|none> <plus_el> <plus_edge> <minus_el|-> <minus_edge|-> <x0> <y0> <x1> <y1>
//! ```
//!
//! Segments are written for inspection; on reading they are re-extracted
//! from the elements and compared with the stored list.

use std::io::{BufRead, Write};

use super::{BoundaryRule, BoundaryTag, MeshError, PolygonalMesh, Rectangle, Vertex};

const HEADER: &str = "DVEM-MESH 1";

pub fn write_mesh<W: Write>(mesh: &PolygonalMesh, mut w: W) -> Result<(), MeshError> {
    let d = &mesh.domain;
    let r = &mesh.boundary_rule;
    writeln!(w, "{HEADER}")?;
    writeln!(w, "domain {} {} {} {}", d.x0, d.y0, d.x1, d.y1)?;
    writeln!(
        w,
        "boundary bottom={} right={} top={} left={}",
        r.bottom.as_str(),
        r.right.as_str(),
        r.top.as_str(),
        r.left.as_str()
    )?;
    writeln!(w, "vertices {}", mesh.vertices.len())?;
    for v in &mesh.vertices {
        writeln!(w, "{} {} {}", v.id, v.x, v.y)?;
    }
    writeln!(w, "elements {}", mesh.elements.len())?;
    for e in &mesh.elements {
        write!(w, "{} {}", e.id, e.vertex_ids.len())?;
        for v in &e.vertex_ids {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    writeln!(w, "segments {}", mesh.segments.len())?;
    for s in &mesh.segments {
        let (kind, tag) = match s.tag {
            Some(t) => ("boundary", t.as_str()),
            None => ("internal", "none"),
        };
        let (me, ml) = match s.minus {
            Some(m) => (m.element.to_string(), m.local_edge.to_string()),
            None => ("-".to_string(), "-".to_string()),
        };
        writeln!(
            w,
            "{} {} {} {} {} {} {} {} {} {} {}",
            s.id, kind, tag, s.plus.element, s.plus.local_edge, me, ml, s.start.x, s.start.y, s.end.x, s.end.y
        )?;
    }
    Ok(())
}

struct Lines<R> {
    inner: std::iter::Enumerate<std::io::Lines<R>>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn next_tokens(&mut self) -> Result<Vec<String>, MeshError> {
        loop {
            let Some((i, l)) = self.inner.next() else {
                return Err(MeshError::Parse { line: self.line + 1, message: "unexpected end of file".into() });
            };
            self.line = i + 1;
            let l = l?;
            let t = l.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            return Ok(t.split_whitespace().map(str::to_string).collect());
        }
    }

    fn err(&self, message: impl Into<String>) -> MeshError {
        MeshError::Parse { line: self.line, message: message.into() }
    }

    fn keyword_count(&mut self, keyword: &str) -> Result<usize, MeshError> {
        let t = self.next_tokens()?;
        if t.len() != 2 || t[0] != keyword {
            return Err(self.err(format!("expected `{keyword} <count>`")));
        }
        t[1].parse().map_err(|_| self.err("bad count"))
    }
}

fn num<T: std::str::FromStr>(tok: &str, lines: &Lines<impl BufRead>) -> Result<T, MeshError> {
    tok.parse().map_err(|_| lines.err(format!("cannot parse `{tok}`")))
}

pub fn read_mesh<R: BufRead>(reader: R) -> Result<PolygonalMesh, MeshError> {
    let mut lines = Lines { inner: reader.lines().enumerate(), line: 0 };
    let header = lines.next_tokens()?.join(" ");
    if header != HEADER {
        return Err(lines.err(format!("expected header `{HEADER}`")));
    }

    let t = lines.next_tokens()?;
    if t.len() != 5 || t[0] != "domain" {
        return Err(lines.err("expected `domain x0 y0 x1 y1`"));
    }
    let domain = Rectangle::new(num(&t[1], &lines)?, num(&t[2], &lines)?, num(&t[3], &lines)?, num(&t[4], &lines)?)?;

    let t = lines.next_tokens()?;
    if t.len() != 5 || t[0] != "boundary" {
        return Err(lines.err("expected `boundary bottom=.. right=.. top=.. left=..`"));
    }
    let mut rule = BoundaryRule::default();
    for kv in &t[1..] {
        let (k, v) = kv.split_once('=').ok_or_else(|| lines.err("expected side=tag"))?;
        let tag = BoundaryTag::parse(v).ok_or_else(|| lines.err(format!("unknown tag `{v}`")))?;
        match k {
            "bottom" => rule.bottom = tag,
            "right" => rule.right = tag,
            "top" => rule.top = tag,
            "left" => rule.left = tag,
            _ => return Err(lines.err(format!("unknown side `{k}`"))),
        }
    }

    let nv = lines.keyword_count("vertices")?;
    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let t = lines.next_tokens()?;
        if t.len() != 3 {
            return Err(lines.err("expected `id x y`"));
        }
        let id: usize = num(&t[0], &lines)?;
        if id != i {
            return Err(lines.err("vertex ids must be consecutive from 0"));
        }
        vertices.push(Vertex { id, x: num(&t[1], &lines)?, y: num(&t[2], &lines)? });
    }

    let ne = lines.keyword_count("elements")?;
    let mut elements = Vec::with_capacity(ne);
    for i in 0..ne {
        let t = lines.next_tokens()?;
        if t.len() < 2 {
            return Err(lines.err("expected `id k v0 ...`"));
        }
        let id: usize = num(&t[0], &lines)?;
        if id != i {
            return Err(lines.err("element ids must be consecutive from 0"));
        }
        let k: usize = num(&t[1], &lines)?;
        if t.len() != 2 + k {
            return Err(lines.err(format!("expected {k} vertex ids")));
        }
        let ids = t[2..].iter().map(|s| num(s, &lines)).collect::<Result<Vec<usize>, _>>()?;
        elements.push(ids);
    }

    let ns = lines.keyword_count("segments")?;
    let mut stored = Vec::with_capacity(ns);
    for _ in 0..ns {
        let t = lines.next_tokens()?;
        if t.len() != 11 {
            return Err(lines.err("malformed segment line"));
        }
        stored.push(t);
    }

    let mesh = PolygonalMesh::from_parts(domain, rule, vertices, elements)?;
    if stored.len() != mesh.segments.len() {
        return Err(MeshError::SegmentMismatch);
    }
    for (s, t) in mesh.segments.iter().zip(&stored) {
        let kind = if s.is_internal() { "internal" } else { "boundary" };
        let tag = s.tag.map_or("none", BoundaryTag::as_str);
        let minus = s.minus.map(|m| (m.element.to_string(), m.local_edge.to_string()));
        let (me, ml) = minus.unwrap_or(("-".into(), "-".into()));
        if t[0] != s.id.to_string()
            || t[1] != kind
            || t[2] != tag
            || t[3] != s.plus.element.to_string()
            || t[4] != s.plus.local_edge.to_string()
            || t[5] != me
            || t[6] != ml
        {
            return Err(MeshError::SegmentMismatch);
        }
    }
    Ok(mesh)
}
