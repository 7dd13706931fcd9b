//! P1 assembly of the dissipative operator, load, residual and Newton
//! Jacobian.
//!
//! Local matrices are computed in parallel and scattered sequentially into a
//! precomputed CSR pattern, so results do not depend on the thread count.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::material::{DiagTensor2, MaterialModel, PdeType};
use crate::mesh::Triangulation2D;
use crate::quadrature::{physical_point, QuadratureError, TriangleRule, GAUSS2_SEGMENT};
use crate::sparse::{CsrMatrix, SparseComplexMatrix};

/// Triangles with `area < DEGENERATE_AREA * h^2` are rejected.
pub const DEGENERATE_AREA: f64 = 1e-14;

pub type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("field has {got} values but the mesh has {expected} vertices")]
    FieldMismatch { expected: usize, got: usize },
    #[error("degenerate triangle {triangle} (area {area:e})")]
    DegenerateTriangle { triangle: usize, area: f64 },
    #[error("epsilon must be finite and non-negative, got {0}")]
    InvalidEpsilon(f64),
    #[error("mesh has no Dirichlet boundary edge")]
    NoDirichletBoundary,
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// Coefficient of the principal part as a function of `Re xi`.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Material(MaterialModel),
    /// Frozen coefficient, used for linear and manufactured problems.
    Constant(DiagTensor2<f64>),
}

impl Coefficient {
    pub fn b_hat(&self, xi: f64) -> DiagTensor2<f64> {
        match self {
            Self::Material(m) => m.b_hat(xi),
            Self::Constant(c) => *c,
        }
    }

    pub fn db_hat(&self, xi: f64) -> DiagTensor2<f64> {
        match self {
            Self::Material(m) => m.db_hat_dxi(xi),
            Self::Constant(_) => DiagTensor2::ZERO,
        }
    }

    /// Uniform bound `M` on the entries.
    pub fn bound(&self) -> f64 {
        match self {
            Self::Material(m) => m.bound(),
            Self::Constant(c) => c.max_abs(),
        }
    }

    pub fn material(&self) -> Option<&MaterialModel> {
        match self {
            Self::Material(m) => Some(m),
            Self::Constant(_) => None,
        }
    }
}

/// Nodal P1 field with complex values.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub values: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn from_real(re: &[f64]) -> Self {
        Self {
            values: re.iter().map(|&r| Complex64::new(r, 0.0)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.re).collect()
    }

    pub fn im(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.im).collect()
    }
}

#[derive(Clone)]
pub struct ProblemSpec<'m> {
    pub mesh: &'m Triangulation2D,
    pub coefficient: Coefficient,
    pub epsilon: f64,
    pub dirichlet: ScalarFn,
    pub neumann: ScalarFn,
    /// Volumetric source, only used by manufactured problems.
    pub source: Option<ScalarFn>,
    pub quadrature_order: usize,
}

impl std::fmt::Debug for ProblemSpec<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("vertices", &self.mesh.vertex_count())
            .field("coefficient", &self.coefficient)
            .field("epsilon", &self.epsilon)
            .field("source", &self.source.is_some())
            .field("quadrature_order", &self.quadrature_order)
            .finish()
    }
}

impl<'m> ProblemSpec<'m> {
    /// Zero boundary data, no dissipation, edge-midpoint quadrature.
    pub fn new(mesh: &'m Triangulation2D, coefficient: Coefficient) -> Self {
        Self {
            mesh,
            coefficient,
            epsilon: 0.0,
            dirichlet: Arc::new(|_, _| 0.0),
            neumann: Arc::new(|_, _| 0.0),
            source: None,
            quadrature_order: 2,
        }
    }

    pub fn with_material(mesh: &'m Triangulation2D, material: MaterialModel) -> Self {
        Self::new(mesh, Coefficient::Material(material))
    }

    pub fn epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn dirichlet(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.dirichlet = Arc::new(f);
        self
    }

    pub fn neumann(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.neumann = Arc::new(f);
        self
    }

    pub fn source(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.source = Some(Arc::new(f));
        self
    }

    pub fn quadrature_order(mut self, order: usize) -> Self {
        self.quadrature_order = order;
        self
    }

    pub fn validate(&self) -> Result<(), AssemblyError> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(AssemblyError::InvalidEpsilon(self.epsilon));
        }
        if !self
            .mesh
            .boundary_edges()
            .iter()
            .any(|e| e.tag.is_dirichlet())
        {
            return Err(AssemblyError::NoDirichletBoundary);
        }
        TriangleRule::with_order(self.quadrature_order)?;
        Ok(())
    }

    pub fn check_field(&self, field: &ComplexField) -> Result<(), AssemblyError> {
        if field.len() != self.mesh.vertex_count() {
            return Err(AssemblyError::FieldMismatch {
                expected: self.mesh.vertex_count(),
                got: field.len(),
            });
        }
        Ok(())
    }

    /// Nodal interpolant of the Dirichlet data; zero off the Dirichlet boundary.
    pub fn dirichlet_values(&self) -> Vec<f64> {
        let mask = self.mesh.dirichlet_mask();
        self.mesh
            .vertices()
            .iter()
            .zip(mask)
            .map(|(&[x, y], d)| if d { (self.dirichlet)(x, y) } else { 0.0 })
            .collect()
    }

    /// `value` in the interior, Dirichlet data on the Dirichlet boundary.
    pub fn initial_guess(&self, value: f64) -> ComplexField {
        let mut field = ComplexField::from_real(&vec![value; self.mesh.vertex_count()]);
        self.impose_dirichlet(&mut field);
        field
    }

    pub fn impose_dirichlet(&self, field: &mut ComplexField) {
        let mask = self.mesh.dirichlet_mask();
        for ((z, &[x, y]), d) in field.values.iter_mut().zip(self.mesh.vertices()).zip(mask) {
            if d {
                *z = Complex64::new((self.dirichlet)(x, y), 0.0);
            }
        }
    }
}

/// Constant P1 gradients and area of a triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct P1Element {
    pub area: f64,
    pub grads: [[f64; 2]; 3],
}

impl P1Element {
    pub fn new(c: &[[f64; 2]; 3]) -> Self {
        let [p0, p1, p2] = *c;
        let two_a = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let grads = [
            [(p1[1] - p2[1]) / two_a, (p2[0] - p1[0]) / two_a],
            [(p2[1] - p0[1]) / two_a, (p0[0] - p2[0]) / two_a],
            [(p0[1] - p1[1]) / two_a, (p1[0] - p0[0]) / two_a],
        ];
        Self {
            area: 0.5 * two_a,
            grads,
        }
    }

    /// Gradient of the P1 function with nodal values `v`.
    pub fn gradient(&self, v: [f64; 3]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for k in 0..3 {
            g[0] += v[k] * self.grads[k][0];
            g[1] += v[k] * self.grads[k][1];
        }
        g
    }

    /// `area * (D grad_j) . grad_i`
    fn weighted(&self, d: DiagTensor2<f64>) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for (i, gi) in self.grads.iter().enumerate() {
            for (j, gj) in self.grads.iter().enumerate() {
                m[i][j] = self.area * (d.d11 * gj[0] * gi[0] + d.d22 * gj[1] * gi[1]);
            }
        }
        m
    }
}

fn longest_edge(c: &[[f64; 2]; 3]) -> f64 {
    (0..3)
        .map(|k| {
            let (a, b) = (c[k], c[(k + 1) % 3]);
            (b[0] - a[0]).hypot(b[1] - a[1])
        })
        .fold(0.0, f64::max)
}

/// Element matrix `(i, j) = int_T coeff(x) grad phi_j . grad phi_i`.
pub fn local_stiffness(
    coords: &[[f64; 2]; 3],
    coeff: impl Fn([f64; 2]) -> DiagTensor2<Complex64>,
    quadrature_order: usize,
) -> Result<[[Complex64; 3]; 3], AssemblyError> {
    let rule = TriangleRule::with_order(quadrature_order)?;
    let el = P1Element::new(coords);
    let h = longest_edge(coords);
    if !(el.area >= DEGENERATE_AREA * h * h) || h == 0.0 {
        return Err(AssemblyError::DegenerateTriangle {
            triangle: 0,
            area: el.area,
        });
    }
    let mut avg = DiagTensor2::new(Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    for (bary, w) in rule.iter() {
        let c = coeff(physical_point(coords, bary));
        avg.d11 += c.d11 * w;
        avg.d22 += c.d22 * w;
    }
    let mut m = [[Complex64::new(0.0, 0.0); 3]; 3];
    for (i, gi) in el.grads.iter().enumerate() {
        for (j, gj) in el.grads.iter().enumerate() {
            m[i][j] = (avg.d11 * gj[0] * gi[0] + avg.d22 * gj[1] * gi[1]) * el.area;
        }
    }
    Ok(m)
}

/// Per-triangle pieces of the operator: coefficient stiffness, identity
/// stiffness and, for Newton, the two transport blocks.
struct LocalBlocks {
    k: [[f64; 3]; 3],
    s: [[f64; 3]; 3],
    tu: [[f64; 3]; 3],
    tv: [[f64; 3]; 3],
}

/// Occurrences of each PDE type over all quadrature points.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TypeCensus {
    pub elliptic: usize,
    pub degenerate: usize,
    pub hyperbolic: usize,
}

impl TypeCensus {
    pub fn total(&self) -> usize {
        self.elliptic + self.degenerate + self.hyperbolic
    }
}

/// Mesh-dependent data reused across assemblies of one problem.
pub struct Assembler<'s, 'm> {
    spec: &'s ProblemSpec<'m>,
    rule: TriangleRule,
    elements: Vec<P1Element>,
    /// Scalar CSR pattern with one row per vertex.
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    /// Value positions of the 3x3 element entries, row-major.
    scatter: Vec<[usize; 9]>,
    dirichlet: Vec<bool>,
    dirichlet_values: Vec<f64>,
}

impl<'s, 'm> Assembler<'s, 'm> {
    pub fn new(spec: &'s ProblemSpec<'m>) -> Result<Self, AssemblyError> {
        spec.validate()?;
        let mesh = spec.mesh;
        let rule = TriangleRule::with_order(spec.quadrature_order)?;
        let mut elements = Vec::with_capacity(mesh.triangle_count());
        for t in 0..mesh.triangle_count() {
            let c = mesh.triangle_coords(t);
            let el = P1Element::new(&c);
            let h = longest_edge(&c);
            if !(el.area >= DEGENERATE_AREA * h * h) {
                return Err(AssemblyError::DegenerateTriangle {
                    triangle: t,
                    area: el.area,
                });
            }
            elements.push(el);
        }

        let n = mesh.vertex_count();
        let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); n];
        for tri in mesh.triangles() {
            for &a in tri {
                neighbours[a].extend_from_slice(tri);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for nb in &mut neighbours {
            nb.sort_unstable();
            nb.dedup();
            col_idx.extend_from_slice(nb);
            row_ptr.push(col_idx.len());
        }
        let scatter = mesh
            .triangles()
            .iter()
            .map(|tri| {
                let mut pos = [0usize; 9];
                for (a, &i) in tri.iter().enumerate() {
                    let row = &col_idx[row_ptr[i]..row_ptr[i + 1]];
                    for (b, &j) in tri.iter().enumerate() {
                        pos[3 * a + b] = row_ptr[i] + row.binary_search(&j).expect("pattern");
                    }
                }
                pos
            })
            .collect();

        Ok(Self {
            spec,
            rule,
            elements,
            row_ptr,
            col_idx,
            scatter,
            dirichlet: mesh.dirichlet_mask(),
            dirichlet_values: spec.dirichlet_values(),
        })
    }

    pub fn spec(&self) -> &ProblemSpec<'m> {
        self.spec
    }

    pub fn dof_count(&self) -> usize {
        self.dirichlet.len()
    }

    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet
    }

    pub fn dirichlet_values(&self) -> &[f64] {
        &self.dirichlet_values
    }

    fn local_blocks(&self, t: usize, u: [f64; 3], v: [f64; 3], transport: bool) -> LocalBlocks {
        let el = &self.elements[t];
        let coeff = &self.spec.coefficient;
        let mut b_avg = DiagTensor2::ZERO;
        let mut d = [DiagTensor2::ZERO; 3];
        for (bary, w) in self.rule.iter() {
            let uq = bary[0] * u[0] + bary[1] * u[1] + bary[2] * u[2];
            b_avg = b_avg + coeff.b_hat(uq) * w;
            if transport {
                let db = coeff.db_hat(uq);
                for j in 0..3 {
                    d[j] = d[j] + db * (w * bary[j]);
                }
            }
        }
        let k = el.weighted(b_avg);
        let s = el.weighted(DiagTensor2::IDENTITY);
        let mut tu = [[0.0; 3]; 3];
        let mut tv = [[0.0; 3]; 3];
        if transport {
            let gu = el.gradient(u);
            let gv = el.gradient(v);
            for (i, gi) in el.grads.iter().enumerate() {
                for j in 0..3 {
                    tu[i][j] = el.area * (d[j].d11 * gu[0] * gi[0] + d[j].d22 * gu[1] * gi[1]);
                    tv[i][j] = el.area * (d[j].d11 * gv[0] * gi[0] + d[j].d22 * gv[1] * gi[1]);
                }
            }
        }
        LocalBlocks { k, s, tu, tv }
    }

    fn nodal(&self, t: usize, xi: &ComplexField) -> ([f64; 3], [f64; 3]) {
        let tri = self.spec.mesh.triangles()[t];
        let u = tri.map(|i| xi.values[i].re);
        let v = tri.map(|i| xi.values[i].im);
        (u, v)
    }

    fn collect_blocks(&self, xi: &ComplexField, transport: bool) -> Vec<LocalBlocks> {
        (0..self.elements.len())
            .into_par_iter()
            .map(|t| {
                let (u, v) = self.nodal(t, xi);
                self.local_blocks(t, u, v, transport)
            })
            .collect()
    }

    fn scatter_real(&self, local: impl Fn(usize) -> [[f64; 3]; 3]) -> CsrMatrix<f64> {
        let mut values = vec![0.0; self.col_idx.len()];
        for (t, pos) in self.scatter.iter().enumerate() {
            let m = local(t);
            for a in 0..3 {
                for b in 0..3 {
                    values[pos[3 * a + b]] += m[a][b];
                }
            }
        }
        let n = self.dof_count();
        CsrMatrix::from_parts(n, n, self.row_ptr.clone(), self.col_idx.clone(), values)
    }

    /// Operator `A(xi)` with coefficient `B_hat(Re xi) + i eps I`, before any
    /// Dirichlet treatment.
    pub fn operator(&self, xi: &ComplexField) -> Result<SparseComplexMatrix, AssemblyError> {
        self.spec.check_field(xi)?;
        let blocks = self.collect_blocks(xi, false);
        let eps = self.spec.epsilon;
        let mut values = vec![Complex64::new(0.0, 0.0); self.col_idx.len()];
        for (blk, pos) in blocks.iter().zip(&self.scatter) {
            for a in 0..3 {
                for b in 0..3 {
                    values[pos[3 * a + b]] += Complex64::new(blk.k[a][b], eps * blk.s[a][b]);
                }
            }
        }
        let n = self.dof_count();
        Ok(CsrMatrix::from_parts(
            n,
            n,
            self.row_ptr.clone(),
            self.col_idx.clone(),
            values,
        ))
    }

    /// Identity-coefficient stiffness `S`.
    pub fn stiffness(&self) -> CsrMatrix<f64> {
        self.scatter_real(|t| self.elements[t].weighted(DiagTensor2::IDENTITY))
    }

    /// Consistent P1 mass matrix.
    pub fn mass(&self) -> CsrMatrix<f64> {
        self.scatter_real(|t| {
            let a = self.elements[t].area / 12.0;
            let mut m = [[a; 3]; 3];
            for (k, row) in m.iter_mut().enumerate() {
                row[k] = 2.0 * a;
            }
            m
        })
    }

    /// Load vector: Neumann data on Neumann edges plus the volumetric source.
    /// Dirichlet rows are zero.
    pub fn load(&self) -> Vec<Complex64> {
        let mesh = self.spec.mesh;
        let mut l = vec![0.0; self.dof_count()];
        let verts = mesh.vertices();
        for e in mesh.boundary_edges().iter().filter(|e| e.tag.is_neumann()) {
            let [a, b] = e.vertices;
            let (pa, pb) = (verts[a], verts[b]);
            let len = (pb[0] - pa[0]).hypot(pb[1] - pa[1]);
            for (t, w) in GAUSS2_SEGMENT {
                let x = pa[0] + t * (pb[0] - pa[0]);
                let y = pa[1] + t * (pb[1] - pa[1]);
                let g = (self.spec.neumann)(x, y) * w * len;
                l[a] += g * (1.0 - t);
                l[b] += g * t;
            }
        }
        if let Some(f) = &self.spec.source {
            let contributions: Vec<[f64; 3]> = (0..self.elements.len())
                .into_par_iter()
                .map(|t| {
                    let coords = mesh.triangle_coords(t);
                    let area = self.elements[t].area;
                    let mut c = [0.0; 3];
                    for (bary, w) in self.rule.iter() {
                        let [x, y] = physical_point(&coords, bary);
                        let fq = f(x, y) * w * area;
                        for k in 0..3 {
                            c[k] += fq * bary[k];
                        }
                    }
                    c
                })
                .collect();
            for (tri, c) in mesh.triangles().iter().zip(contributions) {
                for k in 0..3 {
                    l[tri[k]] += c[k];
                }
            }
        }
        for (li, &d) in l.iter_mut().zip(&self.dirichlet) {
            if d {
                *li = 0.0;
            }
        }
        l.into_iter().map(|x| Complex64::new(x, 0.0)).collect()
    }

    /// Replaces Dirichlet rows by identity rows carrying the boundary values
    /// and moves Dirichlet columns to the right-hand side.
    pub fn apply_dirichlet(&self, a: &mut SparseComplexMatrix, rhs: &mut [Complex64]) {
        let n = self.dof_count();
        let row_ptr = a.row_ptr().to_vec();
        let col_idx = a.col_idx().to_vec();
        let values = a.values_mut();
        for i in 0..n {
            if self.dirichlet[i] {
                for p in row_ptr[i]..row_ptr[i + 1] {
                    values[p] = if col_idx[p] == i {
                        Complex64::new(1.0, 0.0)
                    } else {
                        Complex64::new(0.0, 0.0)
                    };
                }
                rhs[i] = Complex64::new(self.dirichlet_values[i], 0.0);
            } else {
                for p in row_ptr[i]..row_ptr[i + 1] {
                    let j = col_idx[p];
                    if self.dirichlet[j] {
                        rhs[i] -= values[p] * self.dirichlet_values[j];
                        values[p] = Complex64::new(0.0, 0.0);
                    }
                }
            }
        }
    }

    /// Linear system of the frozen problem: operator at `xi` with lifting.
    pub fn lifted_system(
        &self,
        xi: &ComplexField,
        load: &[Complex64],
    ) -> Result<(SparseComplexMatrix, Vec<Complex64>), AssemblyError> {
        let mut a = self.operator(xi)?;
        let mut rhs = load.to_vec();
        self.apply_dirichlet(&mut a, &mut rhs);
        Ok((a, rhs))
    }

    /// `A(xi) xi - l` on free rows, zero on Dirichlet rows.
    pub fn residual(
        &self,
        xi: &ComplexField,
        load: &[Complex64],
    ) -> Result<Vec<Complex64>, AssemblyError> {
        let a = self.operator(xi)?;
        let mut r = a.mul_vec(&xi.values);
        for ((ri, li), &d) in r.iter_mut().zip(load).zip(&self.dirichlet) {
            *ri = if d {
                Complex64::new(0.0, 0.0)
            } else {
                *ri - li
            };
        }
        Ok(r)
    }

    /// Jacobian of the residual in the real unknowns `(u_0, v_0, u_1, v_1, ...)`
    /// with `xi = u + i v`. Row `2i` is the real part of residual `i`, row
    /// `2i + 1` the imaginary part. Dirichlet rows are identity and Dirichlet
    /// columns are zero.
    pub fn jacobian(&self, xi: &ComplexField) -> Result<CsrMatrix<f64>, AssemblyError> {
        self.spec.check_field(xi)?;
        let blocks = self.collect_blocks(xi, true);
        let eps = self.spec.epsilon;
        let n = self.dof_count();

        let mut jrow = Vec::with_capacity(2 * n + 1);
        jrow.push(0);
        let mut jcol = Vec::with_capacity(4 * self.col_idx.len());
        for i in 0..n {
            let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
            for _ in 0..2 {
                for &j in row {
                    jcol.push(2 * j);
                    jcol.push(2 * j + 1);
                }
                jrow.push(jcol.len());
            }
        }
        let mut values = vec![0.0; jcol.len()];
        // position of block entry (2i + a, 2j + b) for scalar position p in row i
        let at = |i: usize, p: usize, a: usize, b: usize| {
            jrow[2 * i + a] + 2 * (p - self.row_ptr[i]) + b
        };
        let tris = self.spec.mesh.triangles();
        for ((blk, pos), tri) in blocks.iter().zip(&self.scatter).zip(tris) {
            for (la, &i) in tri.iter().enumerate() {
                for lb in 0..3 {
                    let p = pos[3 * la + lb];
                    let (k, s) = (blk.k[la][lb], blk.s[la][lb]);
                    values[at(i, p, 0, 0)] += k + blk.tu[la][lb];
                    values[at(i, p, 0, 1)] -= eps * s;
                    values[at(i, p, 1, 0)] += eps * s + blk.tv[la][lb];
                    values[at(i, p, 1, 1)] += k;
                }
            }
        }
        for r in 0..2 * n {
            let i = r / 2;
            for p in jrow[r]..jrow[r + 1] {
                let c = jcol[p];
                if self.dirichlet[i] {
                    values[p] = if c == r { 1.0 } else { 0.0 };
                } else if self.dirichlet[c / 2] {
                    values[p] = 0.0;
                }
            }
        }
        Ok(CsrMatrix::from_parts(2 * n, 2 * n, jrow, jcol, values))
    }

    /// PDE type of the frozen operator at every quadrature point.
    pub fn type_census(&self, xi: &ComplexField) -> Result<TypeCensus, AssemblyError> {
        self.spec.check_field(xi)?;
        let coeff = &self.spec.coefficient;
        let mut census = TypeCensus::default();
        for t in 0..self.elements.len() {
            let (u, _) = self.nodal(t, xi);
            for (bary, _) in self.rule.iter() {
                let uq = bary[0] * u[0] + bary[1] * u[1] + bary[2] * u[2];
                match PdeType::from_det(coeff.b_hat(uq).det()) {
                    PdeType::Elliptic => census.elliptic += 1,
                    PdeType::Degenerate => census.degenerate += 1,
                    PdeType::Hyperbolic => census.hyperbolic += 1,
                }
            }
        }
        Ok(census)
    }

    /// Whether `Re xi` leaves the cut-off interval at any quadrature point.
    pub fn clamping_active(&self, xi: &ComplexField) -> bool {
        let Some(m) = self.spec.coefficient.material() else {
            return false;
        };
        (0..self.elements.len()).any(|t| {
            let (u, _) = self.nodal(t, xi);
            self.rule
                .iter()
                .any(|(bary, _)| m.is_clamped(bary[0] * u[0] + bary[1] * u[1] + bary[2] * u[2]))
        })
    }
}

pub fn assemble_operator(
    spec: &ProblemSpec,
    xi: &ComplexField,
) -> Result<SparseComplexMatrix, AssemblyError> {
    let asm = Assembler::new(spec)?;
    let (a, _) = asm.lifted_system(xi, &vec![Complex64::new(0.0, 0.0); asm.dof_count()])?;
    Ok(a)
}

pub fn assemble_load(spec: &ProblemSpec) -> Result<Vec<Complex64>, AssemblyError> {
    Ok(Assembler::new(spec)?.load())
}

pub fn assemble_residual(
    spec: &ProblemSpec,
    xi: &ComplexField,
) -> Result<Vec<Complex64>, AssemblyError> {
    let asm = Assembler::new(spec)?;
    asm.residual(xi, &asm.load())
}

pub fn assemble_jacobian(
    spec: &ProblemSpec,
    xi: &ComplexField,
) -> Result<CsrMatrix<f64>, AssemblyError> {
    Assembler::new(spec)?.jacobian(xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_crossed_mesh;
    use approx::assert_relative_eq;

    const UNIT: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn local_identity_on_unit_triangle() {
        let m = local_stiffness(&UNIT, |_| DiagTensor2::IDENTITY.with_dissipation(0.0), 2).unwrap();
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(m[i][j].re, expect[i][j], epsilon = 1e-15);
                assert_eq!(m[i][j].im, 0.0);
            }
        }
    }

    #[test]
    fn local_diagonal_and_dissipative() {
        let (a, b, eps) = (2.0, -3.0, 0.25);
        let m =
            local_stiffness(&UNIT, |_| DiagTensor2::new(a, b).with_dissipation(eps), 4).unwrap();
        let expect = [[a + b, -a, -b], [-a, a, 0.0], [-b, 0.0, b]];
        let s = [[2.0, -1.0, -1.0], [-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(m[i][j].re, 0.5 * expect[i][j], epsilon = 1e-15);
                assert_relative_eq!(m[i][j].im, 0.5 * eps * s[i][j], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn local_rejects_degenerate() {
        let flat = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let err = local_stiffness(&flat, |_| DiagTensor2::IDENTITY.with_dissipation(0.0), 2);
        assert!(matches!(err, Err(AssemblyError::DegenerateTriangle { .. })));
    }

    #[test]
    fn local_integrates_varying_coefficient() {
        // coefficient x: int_T x dx = 1/6 on the unit triangle
        let m =
            local_stiffness(&UNIT, |p| DiagTensor2::new(c(p[0], 0.0), c(p[0], 0.0)), 2).unwrap();
        assert_relative_eq!(m[1][1].re, 1.0 / 6.0, epsilon = 1e-15);
    }

    /// Textbook assembly: dense loop over triangles with cotangent-free
    /// gradient formulas computed from the inverse Jacobian.
    fn reference_laplacian(mesh: &Triangulation2D) -> Vec<Vec<f64>> {
        let n = mesh.vertex_count();
        let mut k = vec![vec![0.0; n]; n];
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let [p0, p1, p2] = mesh.triangle_coords(t);
            let j = [
                [p1[0] - p0[0], p2[0] - p0[0]],
                [p1[1] - p0[1], p2[1] - p0[1]],
            ];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            let inv_t = [
                [j[1][1] / det, -j[1][0] / det],
                [-j[0][1] / det, j[0][0] / det],
            ];
            let ref_grads = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
            let g: Vec<[f64; 2]> = ref_grads
                .iter()
                .map(|r| {
                    [
                        inv_t[0][0] * r[0] + inv_t[0][1] * r[1],
                        inv_t[1][0] * r[0] + inv_t[1][1] * r[1],
                    ]
                })
                .collect();
            for a in 0..3 {
                for b in 0..3 {
                    k[tri[a]][tri[b]] += 0.5 * det * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                }
            }
        }
        k
    }

    #[test]
    fn identity_coefficient_matches_reference_laplacian() {
        let mesh = generate_crossed_mesh(2, 2, 1.0).unwrap();
        let spec = ProblemSpec::new(&mesh, Coefficient::Constant(DiagTensor2::IDENTITY));
        let asm = Assembler::new(&spec).unwrap();
        let a = asm
            .operator(&ComplexField::zeros(mesh.vertex_count()))
            .unwrap();
        let reference = reference_laplacian(&mesh);
        for (i, row) in reference.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!((a.get(i, j).re - v).abs() < 1e-14);
                assert_eq!(a.get(i, j).im, 0.0);
            }
        }
        let s = asm.stiffness();
        for (i, row) in reference.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!((s.get(i, j) - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_coefficient_gives_pure_dissipation() {
        let mesh = generate_crossed_mesh(3, 2, 1.0).unwrap();
        let spec = ProblemSpec::new(&mesh, Coefficient::Constant(DiagTensor2::ZERO)).epsilon(0.5);
        let asm = Assembler::new(&spec).unwrap();
        let a = asm
            .operator(&ComplexField::zeros(mesh.vertex_count()))
            .unwrap();
        let s = asm.stiffness();
        for (x, y) in a.values().iter().zip(s.values()) {
            assert_eq!(x.re, 0.0);
            assert_relative_eq!(x.im, 0.5 * y, epsilon = 1e-15);
        }
    }

    #[test]
    fn mass_sums_to_area() {
        let mesh = generate_crossed_mesh(3, 4, 1.5).unwrap();
        let spec = ProblemSpec::new(&mesh, Coefficient::Constant(DiagTensor2::IDENTITY));
        let total: f64 = Assembler::new(&spec).unwrap().mass().values().iter().sum();
        assert_relative_eq!(total, 2.25, epsilon = 1e-13);
    }

    #[test]
    fn constant_neumann_on_one_edge() {
        let mesh = generate_crossed_mesh(1, 1, 2.0).unwrap();
        let spec = ProblemSpec::new(&mesh, Coefficient::Constant(DiagTensor2::IDENTITY))
            .neumann(|_, y| if y == 0.0 { 3.0 } else { 0.0 });
        let l = assemble_load(&spec).unwrap();
        // the bottom edge (0,0)-(2,0) has both ends on the Dirichlet sides
        assert!(l.iter().all(|z| z.norm() == 0.0));

        let mesh = generate_crossed_mesh(2, 1, 2.0).unwrap();
        let spec = ProblemSpec::new(&mesh, Coefficient::Constant(DiagTensor2::IDENTITY))
            .neumann(|_, y| if y == 0.0 { 3.0 } else { 0.0 });
        let l = assemble_load(&spec).unwrap();
        // middle bottom vertex 1 collects c * len / 2 from two edges of length 1
        assert_relative_eq!(l[1].re, 3.0, epsilon = 1e-15);
        assert_eq!(l[4].re, 0.0);
    }

    #[test]
    fn linear_neumann_matches_exact_integral() {
        // g = x on the bottom edge from x = 1 to x = 2: int g phi_left = 1/2 * (4/3)... exact
        // int_1^2 x (2 - x) dx = 2/3, int_1^2 x (x - 1) dx = 5/6
        let mesh = generate_crossed_mesh(3, 1, 3.0).unwrap();
        let spec = ProblemSpec::new(&mesh, Coefficient::Constant(DiagTensor2::IDENTITY)).neumann(
            |x, y| {
                if y == 0.0 && (1.0..=2.0).contains(&x) {
                    x
                } else {
                    0.0
                }
            },
        );
        let l = assemble_load(&spec).unwrap();
        assert_relative_eq!(l[1].re, 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(l[2].re, 5.0 / 6.0, epsilon = 1e-14);
    }

    #[test]
    fn constant_field_has_zero_residual() {
        let mesh = generate_crossed_mesh(4, 4, 1.5).unwrap();
        let material = MaterialModel::with_default_cutoff(-0.9, 0.0).unwrap();
        let spec = ProblemSpec::with_material(&mesh, material)
            .epsilon(0.5)
            .dirichlet(|_, _| 0.4);
        let xi = spec.initial_guess(0.4);
        let r = assemble_residual(&spec, &xi).unwrap();
        assert!(r.iter().all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn field_length_checked() {
        let mesh = generate_crossed_mesh(2, 2, 1.0).unwrap();
        let spec = ProblemSpec::new(&mesh, Coefficient::Constant(DiagTensor2::IDENTITY));
        let err = assemble_residual(&spec, &ComplexField::zeros(3)).unwrap_err();
        assert_eq!(
            err,
            AssemblyError::FieldMismatch {
                expected: mesh.vertex_count(),
                got: 3
            }
        );
    }

    #[test]
    fn spec_validation() {
        let mesh = generate_crossed_mesh(2, 2, 1.0).unwrap();
        let spec =
            ProblemSpec::new(&mesh, Coefficient::Constant(DiagTensor2::IDENTITY)).epsilon(-1.0);
        assert_eq!(spec.validate(), Err(AssemblyError::InvalidEpsilon(-1.0)));
        let spec = ProblemSpec::new(&mesh, Coefficient::Constant(DiagTensor2::IDENTITY))
            .quadrature_order(7);
        assert!(matches!(spec.validate(), Err(AssemblyError::Quadrature(_))));
    }

    #[test]
    fn dirichlet_rows_become_identity() {
        let mesh = generate_crossed_mesh(2, 2, 1.0).unwrap();
        let spec = ProblemSpec::new(&mesh, Coefficient::Constant(DiagTensor2::IDENTITY))
            .dirichlet(|x, _| x);
        let a = assemble_operator(&spec, &ComplexField::zeros(mesh.vertex_count())).unwrap();
        let mask = mesh.dirichlet_mask();
        for i in 0..mesh.vertex_count() {
            for (j, v) in a.row(i) {
                if mask[i] {
                    assert_eq!(v, c(if i == j { 1.0 } else { 0.0 }, 0.0));
                } else if mask[j] {
                    assert_eq!(v, c(0.0, 0.0));
                }
            }
        }
        assert!(a.asymmetry() < 1e-15);
    }

    #[test]
    fn transport_vanishes_outside_cutoff() {
        let mesh = generate_crossed_mesh(2, 2, 1.0).unwrap();
        let material = MaterialModel::with_default_cutoff(-0.9, 0.9).unwrap();
        let spec = ProblemSpec::with_material(&mesh, material).epsilon(0.1);
        let asm = Assembler::new(&spec).unwrap();
        let xi = ComplexField {
            values: mesh
                .vertices()
                .iter()
                .map(|p| c(1.5 + p[0] * 0.1, p[1]))
                .collect(),
        };
        let blocks = asm.collect_blocks(&xi, true);
        for b in blocks {
            assert!(b.tu.iter().flatten().all(|&x| x == 0.0));
            assert!(b.tv.iter().flatten().all(|&x| x == 0.0));
        }
    }
}
