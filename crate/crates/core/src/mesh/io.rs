//! ASCII mesh format.
//!
//! ```text
//! ntri-mesh 1
//! <nv> <nt> <nb>
//! <x> <y>            (nv lines)
//! <i0> <i1> <i2>     (nt lines, 0-based, counterclockwise)
//! <i0> <i1> <tag>    (nb lines)
//! ```

use std::fmt::Write as _;

use super::{BoundaryEdge, BoundaryTag, MeshError, Triangulation2D};

const HEADER: &str = "ntri-mesh 1";

pub fn write_mesh(mesh: &Triangulation2D) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    let _ = writeln!(
        out,
        "{} {} {}",
        mesh.vertex_count(),
        mesh.triangle_count(),
        mesh.boundary_edges().len()
    );
    for [x, y] in mesh.vertices() {
        let _ = writeln!(out, "{x:.16e} {y:.16e}");
    }
    for [a, b, c] in mesh.triangles() {
        let _ = writeln!(out, "{a} {b} {c}");
    }
    for e in mesh.boundary_edges() {
        let _ = writeln!(out, "{} {} {}", e.vertices[0], e.vertices[1], e.tag);
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    /// Next non-blank line with its 1-based number.
    fn next(&mut self) -> Option<(usize, &'a str)> {
        self.inner
            .by_ref()
            .map(|(i, l)| (i + 1, l.trim()))
            .find(|(_, l)| !l.is_empty())
    }

    fn expect(&mut self, what: &str, last: usize) -> Result<(usize, &'a str), MeshError> {
        self.next().ok_or_else(|| MeshError::Parse {
            line: last + 1,
            message: format!("unexpected end of file, expected {what}"),
        })
    }
}

fn fields<const N: usize>(line: usize, text: &str) -> Result<[&str; N], MeshError> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    parts.try_into().map_err(|p: Vec<&str>| MeshError::Parse {
        line,
        message: format!("expected {N} fields, found {}", p.len()),
    })
}

fn parse<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, MeshError> {
    s.parse().map_err(|_| MeshError::Parse {
        line,
        message: format!("cannot parse `{s}`"),
    })
}

pub fn read_mesh(text: &str) -> Result<Triangulation2D, MeshError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (ln, header) = lines.expect("header", 0)?;
    if header != HEADER {
        return Err(MeshError::Parse {
            line: ln,
            message: format!("malformed header `{header}`, expected `{HEADER}`"),
        });
    }
    let (ln, counts) = lines.expect("counts line", ln)?;
    let [nv, nt, nb] = fields::<3>(ln, counts)?;
    let (nv, nt, nb): (usize, usize, usize) = (parse(ln, nv)?, parse(ln, nt)?, parse(ln, nb)?);

    let mut last = ln;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.expect("vertex", last)?;
        let [x, y] = fields::<2>(ln, l)?;
        let p: [f64; 2] = [parse(ln, x)?, parse(ln, y)?];
        if !p[0].is_finite() || !p[1].is_finite() {
            return Err(MeshError::Parse {
                line: ln,
                message: "non-finite coordinate".into(),
            });
        }
        vertices.push(p);
        last = ln;
    }

    let mut triangles = Vec::with_capacity(nt);
    let mut tri_lines = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (ln, l) = lines.expect("triangle", last)?;
        let f = fields::<3>(ln, l)?;
        let mut t = [0usize; 3];
        for (slot, s) in t.iter_mut().zip(f) {
            *slot = parse(ln, s)?;
            if *slot >= nv {
                return Err(MeshError::IndexOutOfRange {
                    line: ln,
                    index: *slot,
                    count: nv,
                });
            }
        }
        triangles.push(t);
        tri_lines.push(ln);
        last = ln;
    }

    let mut edges = Vec::with_capacity(nb);
    let mut edge_lines = Vec::with_capacity(nb);
    for _ in 0..nb {
        let (ln, l) = lines.expect("boundary edge", last)?;
        let [a, b, tag] = fields::<3>(ln, l)?;
        let (a, b): (usize, usize) = (parse(ln, a)?, parse(ln, b)?);
        for v in [a, b] {
            if v >= nv {
                return Err(MeshError::IndexOutOfRange {
                    line: ln,
                    index: v,
                    count: nv,
                });
            }
        }
        let tag = BoundaryTag::parse(tag).ok_or_else(|| MeshError::Parse {
            line: ln,
            message: format!("unknown boundary tag `{tag}`"),
        })?;
        edges.push(BoundaryEdge {
            vertices: [a, b],
            tag,
        });
        edge_lines.push(ln);
        last = ln;
    }
    if let Some((ln, _)) = lines.next() {
        return Err(MeshError::Parse {
            line: ln,
            message: "trailing content after boundary edges".into(),
        });
    }

    let mesh = Triangulation2D::new_unchecked(vertices, triangles, edges);
    mesh.check(Some((&tri_lines, &edge_lines)))?;
    Ok(mesh)
}
