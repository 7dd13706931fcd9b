//! Least-squares reconstruction of the panel rotation and the effective
//! deformation, and VTK/CSV export.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use log::warn;
use thiserror::Error;

use crate::assembly::{ComplexField, P1Element};
use crate::material::{rotation, MaterialModel};
use crate::mesh::Triangulation2D;
use crate::quadrature::TriangleRule;
use crate::sparse::{CsrMatrix, LinearSolveError, SparseLu};

#[derive(Debug, Error)]
pub enum PostprocessError {
    #[error("field has {got} values but the mesh has {expected} vertices")]
    FieldMismatch { expected: usize, got: usize },
    #[error("anchor vertex {anchor} out of range ({count} vertices)")]
    Anchor { anchor: usize, count: usize },
    #[error("mesh is not connected: vertex {0} is unreachable from the anchor")]
    Disconnected(usize),
    #[error(transparent)]
    Linear(#[from] LinearSolveError),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField2 {
    pub values: Vec<[f64; 2]>,
}

impl VectorField2 {
    pub fn component(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[k]).collect()
    }
}

fn check_len(mesh: &Triangulation2D, got: usize) -> Result<(), PostprocessError> {
    if got != mesh.vertex_count() {
        return Err(PostprocessError::FieldMismatch {
            expected: mesh.vertex_count(),
            got,
        });
    }
    Ok(())
}

/// Factorized normal equations of `min int |grad p - G|^2` over P1 with
/// `p(anchor) = 0`.
pub struct LeastSquares<'m> {
    mesh: &'m Triangulation2D,
    elements: Vec<P1Element>,
    rule: TriangleRule,
    matrix: CsrMatrix<f64>,
    lu: SparseLu<f64>,
    anchor: usize,
}

impl<'m> LeastSquares<'m> {
    pub fn new(mesh: &'m Triangulation2D, anchor: usize) -> Result<Self, PostprocessError> {
        let n = mesh.vertex_count();
        if anchor >= n {
            return Err(PostprocessError::Anchor { anchor, count: n });
        }
        check_connected(mesh, anchor)?;
        let elements: Vec<P1Element> = (0..mesh.triangle_count())
            .map(|t| P1Element::new(&mesh.triangle_coords(t)))
            .collect();
        let mut triplets = Vec::with_capacity(9 * elements.len());
        for (tri, el) in mesh.triangles().iter().zip(&elements) {
            for a in 0..3 {
                for b in 0..3 {
                    let (i, j) = (tri[a], tri[b]);
                    let v = if i == anchor || j == anchor {
                        0.0
                    } else {
                        el.area
                            * (el.grads[a][0] * el.grads[b][0] + el.grads[a][1] * el.grads[b][1])
                    };
                    triplets.push((i, j, v));
                }
            }
        }
        triplets.push((anchor, anchor, 1.0));
        let matrix = CsrMatrix::from_triplets(n, n, &triplets);
        let lu = SparseLu::factorize(&matrix)?;
        Ok(Self {
            mesh,
            elements,
            rule: TriangleRule::edge_midpoints(),
            matrix,
            lu,
            anchor,
        })
    }

    /// Right-hand side `b_i = int G . grad phi_i`, with `G` given per triangle
    /// and barycentric quadrature point.
    fn rhs(&self, target: &impl Fn(usize, &[f64; 3]) -> [f64; 2]) -> Vec<f64> {
        let mut b = vec![0.0; self.mesh.vertex_count()];
        for (t, (tri, el)) in self.mesh.triangles().iter().zip(&self.elements).enumerate() {
            let mut g = [0.0; 2];
            for (bary, w) in self.rule.iter() {
                let gq = target(t, bary);
                g[0] += w * gq[0];
                g[1] += w * gq[1];
            }
            for k in 0..3 {
                b[tri[k]] += el.area * (g[0] * el.grads[k][0] + g[1] * el.grads[k][1]);
            }
        }
        b[self.anchor] = 0.0;
        b
    }

    pub fn solve(
        &self,
        target: impl Fn(usize, &[f64; 3]) -> [f64; 2],
    ) -> Result<ScalarField, PostprocessError> {
        let b = self.rhs(&target);
        Ok(ScalarField {
            values: self.lu.solve_refined(&self.matrix, &b)?,
        })
    }

    /// Max-norm of the normal-equation residual at `p` relative to the
    /// right-hand side; zero at the least-squares minimizer.
    pub fn normal_residual(
        &self,
        p: &ScalarField,
        target: impl Fn(usize, &[f64; 3]) -> [f64; 2],
    ) -> f64 {
        let b = self.rhs(&target);
        let ap = self.matrix.mul_vec(&p.values);
        let scale = b
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()))
            .max(f64::MIN_POSITIVE);
        ap.iter()
            .zip(&b)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
            / scale
    }

    pub fn element(&self, t: usize) -> &P1Element {
        &self.elements[t]
    }
}

fn check_connected(mesh: &Triangulation2D, anchor: usize) -> Result<(), PostprocessError> {
    let n = mesh.vertex_count();
    let mut adjacency = vec![Vec::new(); n];
    for tri in mesh.triangles() {
        for a in 0..3 {
            adjacency[tri[a]].extend([tri[(a + 1) % 3], tri[(a + 2) % 3]]);
        }
    }
    let mut seen = vec![false; n];
    let mut stack = vec![anchor];
    seen[anchor] = true;
    while let Some(v) = stack.pop() {
        for &w in &adjacency[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(v) => Err(PostprocessError::Disconnected(v)),
        None => Ok(()),
    }
}

fn interpolate(values: &[f64], tri: &[usize; 3], bary: &[f64; 3]) -> f64 {
    bary[0] * values[tri[0]] + bary[1] * values[tri[1]] + bary[2] * values[tri[2]]
}

/// Generic least-squares potential, exposed for verification.
pub fn least_squares_potential(
    mesh: &Triangulation2D,
    anchor: usize,
    target: impl Fn(usize, &[f64; 3]) -> [f64; 2],
) -> Result<ScalarField, PostprocessError> {
    LeastSquares::new(mesh, anchor)?.solve(target)
}

fn gamma_target<'a>(
    ls: &'a LeastSquares,
    material: &'a MaterialModel,
    re: &'a [f64],
) -> impl Fn(usize, &[f64; 3]) -> [f64; 2] + 'a {
    let tris = ls.mesh.triangles();
    move |t, bary| {
        let tri = &tris[t];
        let grad = ls.element(t).gradient(tri.map(|i| re[i]));
        let (g12, g21) = material.gamma_hat(interpolate(re, tri, bary));
        [g12 * grad[1], g21 * grad[0]]
    }
}

/// Rotation field with `grad gamma ~ Gamma_hat(Re xi) grad Re xi` and
/// `gamma(anchor) = 0`.
pub fn reconstruct_gamma(
    mesh: &Triangulation2D,
    material: &MaterialModel,
    xi: &ComplexField,
    anchor: usize,
) -> Result<ScalarField, PostprocessError> {
    check_len(mesh, xi.len())?;
    let re = xi.re();
    if re.iter().any(|&x| material.is_clamped(x)) {
        warn!(
            "Re xi leaves the cut-off interval [{}, {}]; the reconstructed rotation uses clamped coefficients",
            material.xi_minus(),
            material.xi_plus()
        );
    }
    let ls = LeastSquares::new(mesh, anchor)?;
    ls.solve(gamma_target(&ls, material, &re))
}

/// Normal-equation residual of a reconstructed rotation field.
pub fn gamma_normal_residual(
    mesh: &Triangulation2D,
    material: &MaterialModel,
    xi: &ComplexField,
    gamma: &ScalarField,
    anchor: usize,
) -> Result<f64, PostprocessError> {
    let ls = LeastSquares::new(mesh, anchor)?;
    let re = xi.re();
    Ok(ls.normal_residual(gamma, gamma_target(&ls, material, &re)))
}

/// Effective deformation with `grad y ~ R(gamma) A_eff(Re xi)` and
/// `y(anchor) = 0`. Both components share one factorization.
pub fn reconstruct_yeff(
    mesh: &Triangulation2D,
    material: &MaterialModel,
    xi: &ComplexField,
    gamma: &ScalarField,
    anchor: usize,
) -> Result<VectorField2, PostprocessError> {
    check_len(mesh, xi.len())?;
    check_len(mesh, gamma.values.len())?;
    let ls = LeastSquares::new(mesh, anchor)?;
    let re = xi.re();
    let tris = mesh.triangles();
    let tensor = |t: usize, bary: &[f64; 3]| {
        let tri = &tris[t];
        let a = material.a_eff(interpolate(&re, tri, bary));
        let r = rotation(interpolate(&gamma.values, tri, bary));
        [
            [r[0][0] * a.d11, r[0][1] * a.d22],
            [r[1][0] * a.d11, r[1][1] * a.d22],
        ]
    };
    let (x, y) = rayon::join(
        || ls.solve(|t, b| tensor(t, b)[0]),
        || ls.solve(|t, b| tensor(t, b)[1]),
    );
    let (x, y) = (x?, y?);
    Ok(VectorField2 {
        values: x
            .values
            .into_iter()
            .zip(y.values)
            .map(|(a, b)| [a, b])
            .collect(),
    })
}

/// Nodal fields written together to VTK and CSV.
pub struct ExportFields<'a> {
    pub mesh: &'a Triangulation2D,
    pub xi: &'a ComplexField,
    pub gamma: &'a ScalarField,
    pub yeff: &'a VectorField2,
}

impl ExportFields<'_> {
    fn check(&self) -> Result<(), PostprocessError> {
        check_len(self.mesh, self.xi.len())?;
        check_len(self.mesh, self.gamma.values.len())?;
        check_len(self.mesh, self.yeff.values.len())
    }
}

pub fn write_vtk(fields: &ExportFields, out: &mut impl Write) -> Result<(), PostprocessError> {
    fields.check()?;
    write_vtk_inner(fields, out).map_err(|source| PostprocessError::Io {
        path: "<stream>".into(),
        source,
    })
}

fn write_vtk_inner(f: &ExportFields, out: &mut impl Write) -> io::Result<()> {
    let mesh = f.mesh;
    let (n, nt) = (mesh.vertex_count(), mesh.triangle_count());
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "kirigami slit opening")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {n} double")?;
    for [x, y] in mesh.vertices() {
        writeln!(out, "{x} {y} 0")?;
    }
    writeln!(out, "CELLS {nt} {}", 4 * nt)?;
    for [a, b, c] in mesh.triangles() {
        writeln!(out, "3 {a} {b} {c}")?;
    }
    writeln!(out, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        writeln!(out, "5")?;
    }
    writeln!(out, "POINT_DATA {n}")?;
    let scalars: [(&str, Vec<f64>); 3] = [
        ("xi_re", f.xi.re()),
        ("xi_im", f.xi.im()),
        ("gamma", f.gamma.values.clone()),
    ];
    for (name, values) in scalars {
        writeln!(out, "SCALARS {name} double 1")?;
        writeln!(out, "LOOKUP_TABLE default")?;
        for v in values {
            writeln!(out, "{v}")?;
        }
    }
    writeln!(out, "VECTORS yeff double")?;
    for [u, v] in &f.yeff.values {
        writeln!(out, "{u} {v} 0")?;
    }
    Ok(())
}

pub const CSV_HEADER: &str = "vertex,x,y,xi_re,xi_im,gamma,yeff_x,yeff_y";

pub fn write_csv(fields: &ExportFields, out: &mut impl Write) -> Result<(), PostprocessError> {
    fields.check()?;
    let mut body = || -> io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for (i, [x, y]) in fields.mesh.vertices().iter().enumerate() {
            let z = fields.xi.values[i];
            let [u, v] = fields.yeff.values[i];
            writeln!(
                out,
                "{i},{x},{y},{},{},{},{u},{v}",
                z.re, z.im, fields.gamma.values[i]
            )?;
        }
        Ok(())
    };
    body().map_err(|source| PostprocessError::Io {
        path: "<stream>".into(),
        source,
    })
}

fn to_file(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<File>) -> Result<(), PostprocessError>,
) -> Result<(), PostprocessError> {
    let io_err = |source| PostprocessError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    write(&mut w)?;
    w.flush().map_err(io_err)
}

pub fn export_vtk(fields: &ExportFields, path: &Path) -> Result<(), PostprocessError> {
    to_file(path, |w| write_vtk(fields, w))
}

pub fn export_csv(fields: &ExportFields, path: &Path) -> Result<(), PostprocessError> {
    to_file(path, |w| write_csv(fields, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_crossed_mesh;
    use std::f64::consts::FRAC_PI_2;

    fn auxetic() -> MaterialModel {
        MaterialModel::with_default_cutoff(-0.9, 0.9).unwrap()
    }

    #[test]
    fn constant_xi_gives_zero_gamma() {
        let mesh = generate_crossed_mesh(4, 4, 1.0).unwrap();
        let xi = ComplexField::from_real(&vec![0.3; mesh.vertex_count()]);
        let g = reconstruct_gamma(&mesh, &auxetic(), &xi, 0).unwrap();
        assert!(g.values.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn identity_deformation() {
        let mesh = generate_crossed_mesh(3, 3, 1.5).unwrap();
        let n = mesh.vertex_count();
        let xi = ComplexField::zeros(n);
        let gamma = ScalarField {
            values: vec![0.0; n],
        };
        let anchor = 5;
        let y = reconstruct_yeff(&mesh, &auxetic(), &xi, &gamma, anchor).unwrap();
        let a = mesh.vertices()[anchor];
        for (p, q) in mesh.vertices().iter().zip(&y.values) {
            assert!((q[0] - (p[0] - a[0])).abs() < 1e-12);
            assert!((q[1] - (p[1] - a[1])).abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_turn_is_rigid_rotation() {
        let mesh = generate_crossed_mesh(3, 2, 1.0).unwrap();
        let n = mesh.vertex_count();
        let gamma = ScalarField {
            values: vec![FRAC_PI_2; n],
        };
        let y = reconstruct_yeff(&mesh, &auxetic(), &ComplexField::zeros(n), &gamma, 0).unwrap();
        for (p, q) in mesh.vertices().iter().zip(&y.values) {
            assert!((q[0] + p[1]).abs() < 1e-12);
            assert!((q[1] - p[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn anchor_and_connectivity_errors() {
        let mesh = generate_crossed_mesh(1, 1, 1.0).unwrap();
        assert!(matches!(
            LeastSquares::new(&mesh, 9),
            Err(PostprocessError::Anchor {
                anchor: 9,
                count: 5
            })
        ));
        let lonely = Triangulation2D::new_unchecked(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0]],
            vec![[0, 1, 2]],
            vec![],
        );
        assert!(matches!(
            LeastSquares::new(&lonely, 0),
            Err(PostprocessError::Disconnected(3))
        ));
    }

    #[test]
    fn length_mismatch() {
        let mesh = generate_crossed_mesh(1, 1, 1.0).unwrap();
        let err = reconstruct_gamma(&mesh, &auxetic(), &ComplexField::zeros(2), 0).unwrap_err();
        assert!(matches!(
            err,
            PostprocessError::FieldMismatch {
                expected: 5,
                got: 2
            }
        ));
    }

    #[test]
    fn vtk_layout_for_single_cell() {
        let mesh = generate_crossed_mesh(1, 1, 1.0).unwrap();
        let fields = ExportFields {
            mesh: &mesh,
            xi: &ComplexField::zeros(5),
            gamma: &ScalarField {
                values: vec![0.0; 5],
            },
            yeff: &VectorField2 {
                values: vec![[0.0; 2]; 5],
            },
        };
        let mut buf = Vec::new();
        write_vtk(&fields, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 3.0");
        assert!(text.contains("POINTS 5 double\n"));
        assert!(text.contains("CELLS 4 16\n"));
        assert!(text.contains("CELL_TYPES 4\n5\n5\n5\n5\n"));
        assert!(text.contains("SCALARS xi_re double 1\nLOOKUP_TABLE default\n0\n0\n0\n0\n0\n"));
        assert!(text.contains("VECTORS yeff double\n"));

        let mut buf = Vec::new();
        write_csv(&fields, &mut buf).unwrap();
        let csv = String::from_utf8(buf).unwrap();
        assert_eq!(csv.lines().count(), 6);
        assert_eq!(csv.lines().next(), Some(CSV_HEADER));
    }
}
