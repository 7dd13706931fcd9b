//! Conforming triangulations of polygonal domains with tagged boundary edges.
//!
//! Generated meshes use the "crossed" pattern: every rectangular grid cell is
//! split into four triangles around its centroid. The left and right sides are
//! tagged Dirichlet, the top and bottom sides Neumann.

mod io;

pub use io::{read_mesh, write_mesh};

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("invalid mesh parameters: {0}")]
    InvalidParameters(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: index out of range ({index} >= {count})")]
    IndexOutOfRange {
        line: usize,
        index: usize,
        count: usize,
    },
    #[error("line {line}: triangle has non-positive signed area {area:e}")]
    Orientation { line: usize, area: f64 },
    #[error("non-conforming connectivity: edge ({0}, {1}) is shared by more than two triangles")]
    NonConforming(usize, usize),
    #[error("untagged boundary edge ({0}, {1})")]
    UntaggedBoundaryEdge(usize, usize),
    #[error("line {line}: tagged edge ({a}, {b}) is not a boundary edge")]
    NotABoundaryEdge { line: usize, a: usize, b: usize },
    #[error("line {line}: boundary edge ({a}, {b}) is tagged twice")]
    DuplicateTag { line: usize, a: usize, b: usize },
}

/// Boundary condition class attached to a boundary edge.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    DirichletLeft,
    DirichletRight,
    NeumannTop,
    NeumannBottom,
    /// User tag. The name must start with `dirichlet` or `neumann`, which
    /// decides the condition type.
    Custom(String),
}

impl BoundaryTag {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "dirichlet_left" => Some(Self::DirichletLeft),
            "dirichlet_right" => Some(Self::DirichletRight),
            "neumann_top" => Some(Self::NeumannTop),
            "neumann_bottom" => Some(Self::NeumannBottom),
            other
                if (other.starts_with("dirichlet") || other.starts_with("neumann"))
                    && !other.chars().any(char::is_whitespace) =>
            {
                Some(Self::Custom(other.to_string()))
            }
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Self::DirichletLeft => "dirichlet_left",
            Self::DirichletRight => "dirichlet_right",
            Self::NeumannTop => "neumann_top",
            Self::NeumannBottom => "neumann_bottom",
            Self::Custom(name) => name,
        }
    }

    pub fn is_dirichlet(&self) -> bool {
        self.name().starts_with("dirichlet")
    }

    pub fn is_neumann(&self) -> bool {
        !self.is_dirichlet()
    }
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub tag: BoundaryTag,
}

/// Conforming triangle mesh. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct Triangulation2D {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshStatistics {
    pub h: f64,
    pub vertex_count: usize,
    pub triangle_count: usize,
    /// Smallest interior angle over all triangles, in radians.
    pub min_angle: f64,
}

impl Triangulation2D {
    /// Builds a mesh and checks orientation, conformity and boundary tagging.
    pub fn new(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        boundary_edges: Vec<BoundaryEdge>,
    ) -> Result<Self, MeshError> {
        let mesh = Self::new_unchecked(vertices, triangles, boundary_edges);
        mesh.check(None)?;
        Ok(mesh)
    }

    pub(crate) fn new_unchecked(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        boundary_edges: Vec<BoundaryEdge>,
    ) -> Self {
        let h = triangles
            .iter()
            .map(|t| longest_edge(&vertices, t))
            .fold(0.0, f64::max);
        Self {
            vertices,
            triangles,
            boundary_edges,
            h,
        }
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    /// Largest triangle diameter (longest edge).
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_coords(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [p0, p1, p2] = self.triangle_coords(t);
        0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
    }

    /// Vertices lying on at least one Dirichlet-tagged edge.
    pub fn dirichlet_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.vertices.len()];
        for e in self.boundary_edges.iter().filter(|e| e.tag.is_dirichlet()) {
            mask[e.vertices[0]] = true;
            mask[e.vertices[1]] = true;
        }
        mask
    }

    pub fn statistics(&self) -> MeshStatistics {
        mesh_statistics(self)
    }

    /// Validates the invariants of a triangulation. `lines` optionally maps
    /// triangle and boundary-edge indices back to source lines for messages.
    pub(crate) fn check(&self, lines: Option<(&[usize], &[usize])>) -> Result<(), MeshError> {
        let nv = self.vertices.len();
        let tri_line = |t: usize| lines.map_or(0, |(l, _)| l[t]);
        let edge_line = |e: usize| lines.map_or(0, |(_, l)| l[e]);

        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                if v >= nv {
                    return Err(MeshError::IndexOutOfRange {
                        line: tri_line(t),
                        index: v,
                        count: nv,
                    });
                }
            }
            let area = self.signed_area(t);
            if !(area > 0.0) {
                return Err(MeshError::Orientation {
                    line: tri_line(t),
                    area,
                });
            }
        }
        for (e, edge) in self.boundary_edges.iter().enumerate() {
            for &v in &edge.vertices {
                if v >= nv {
                    return Err(MeshError::IndexOutOfRange {
                        line: edge_line(e),
                        index: v,
                        count: nv,
                    });
                }
            }
        }

        let counts = edge_counts(&self.triangles);
        for (&(a, b), &c) in &counts {
            if c > 2 {
                return Err(MeshError::NonConforming(a, b));
            }
        }

        let mut tagged: HashMap<(usize, usize), usize> = HashMap::new();
        for (e, edge) in self.boundary_edges.iter().enumerate() {
            let [a, b] = edge.vertices;
            let key = sorted_edge(a, b);
            if counts.get(&key) != Some(&1) {
                return Err(MeshError::NotABoundaryEdge {
                    line: edge_line(e),
                    a,
                    b,
                });
            }
            if tagged.insert(key, e).is_some() {
                return Err(MeshError::DuplicateTag {
                    line: edge_line(e),
                    a,
                    b,
                });
            }
        }
        let mut hull: Vec<(usize, usize)> = counts
            .iter()
            .filter(|(_, &c)| c == 1)
            .map(|(&k, _)| k)
            .collect();
        hull.sort_unstable();
        if let Some(&(a, b)) = hull.iter().find(|k| !tagged.contains_key(k)) {
            return Err(MeshError::UntaggedBoundaryEdge(a, b));
        }
        Ok(())
    }
}

pub(crate) fn sorted_edge(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

pub(crate) fn edge_counts(triangles: &[[usize; 3]]) -> HashMap<(usize, usize), usize> {
    let mut counts = HashMap::with_capacity(triangles.len() * 2);
    for t in triangles {
        for k in 0..3 {
            *counts.entry(sorted_edge(t[k], t[(k + 1) % 3])).or_insert(0) += 1;
        }
    }
    counts
}

fn dist(p: [f64; 2], q: [f64; 2]) -> f64 {
    (p[0] - q[0]).hypot(p[1] - q[1])
}

fn longest_edge(vertices: &[[f64; 2]], t: &[usize; 3]) -> f64 {
    let [a, b, c] = t.map(|i| vertices.get(i).copied().unwrap_or([0.0, 0.0]));
    dist(a, b).max(dist(b, c)).max(dist(c, a))
}

/// Crossed structured mesh of the square `(0, length)^2` with `nx * ny` cells.
///
/// Vertex numbering: grid corners `j * (nx + 1) + i` first, then cell
/// centroids `(nx + 1) * (ny + 1) + j * nx + i`.
pub fn generate_crossed_mesh(
    nx: usize,
    ny: usize,
    length: f64,
) -> Result<Triangulation2D, MeshError> {
    if nx == 0 || ny == 0 {
        return Err(MeshError::InvalidParameters(format!(
            "nx and ny must be positive (got {nx}, {ny})"
        )));
    }
    if !(length > 0.0) || !length.is_finite() {
        return Err(MeshError::InvalidParameters(format!(
            "length must be positive (got {length})"
        )));
    }
    let dx = length / nx as f64;
    let dy = length / ny as f64;
    let corner = |i: usize, j: usize| j * (nx + 1) + i;
    let n_corners = (nx + 1) * (ny + 1);

    let mut vertices = Vec::with_capacity(n_corners + nx * ny);
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([i as f64 * dx, j as f64 * dy]);
        }
    }
    for j in 0..ny {
        for i in 0..nx {
            vertices.push([(i as f64 + 0.5) * dx, (j as f64 + 0.5) * dy]);
        }
    }

    let mut triangles = Vec::with_capacity(4 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let c = n_corners + j * nx + i;
            let (p00, p10, p11, p01) = (
                corner(i, j),
                corner(i + 1, j),
                corner(i + 1, j + 1),
                corner(i, j + 1),
            );
            triangles.push([p00, p10, c]);
            triangles.push([p10, p11, c]);
            triangles.push([p11, p01, c]);
            triangles.push([p01, p00, c]);
        }
    }

    let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        boundary_edges.push(BoundaryEdge {
            vertices: [corner(i, 0), corner(i + 1, 0)],
            tag: BoundaryTag::NeumannBottom,
        });
    }
    for j in 0..ny {
        boundary_edges.push(BoundaryEdge {
            vertices: [corner(nx, j), corner(nx, j + 1)],
            tag: BoundaryTag::DirichletRight,
        });
    }
    for i in (0..nx).rev() {
        boundary_edges.push(BoundaryEdge {
            vertices: [corner(i + 1, ny), corner(i, ny)],
            tag: BoundaryTag::NeumannTop,
        });
    }
    for j in (0..ny).rev() {
        boundary_edges.push(BoundaryEdge {
            vertices: [corner(0, j + 1), corner(0, j)],
            tag: BoundaryTag::DirichletLeft,
        });
    }

    Ok(Triangulation2D::new_unchecked(
        vertices,
        triangles,
        boundary_edges,
    ))
}

pub fn mesh_statistics(mesh: &Triangulation2D) -> MeshStatistics {
    let mut min_angle = f64::INFINITY;
    for t in 0..mesh.triangle_count() {
        let p = mesh.triangle_coords(t);
        for k in 0..3 {
            let a = p[k];
            let b = p[(k + 1) % 3];
            let c = p[(k + 2) % 3];
            let u = [b[0] - a[0], b[1] - a[1]];
            let v = [c[0] - a[0], c[1] - a[1]];
            let cross = u[0] * v[1] - u[1] * v[0];
            let dot = u[0] * v[0] + u[1] * v[1];
            min_angle = min_angle.min(cross.abs().atan2(dot));
        }
    }
    MeshStatistics {
        h: mesh.h(),
        vertex_count: mesh.vertex_count(),
        triangle_count: mesh.triangle_count(),
        min_angle,
    }
}
