//! Runs, mesh-refinement studies and dissipation sweeps driven by a
//! [`RunConfig`].

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use log::info;
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::assembly::{
    Assembler, AssemblyError, Coefficient, ComplexField, ProblemSpec, TypeCensus,
};
use crate::config::{Case, ConfigError, RunConfig, SolverKind};
use crate::material::{DiagTensor2, MaterialError, MaterialModel};
use crate::mesh::{generate_crossed_mesh, MeshError, Triangulation2D};
use crate::postprocess::{
    export_csv, export_vtk, reconstruct_gamma, reconstruct_yeff, ExportFields, PostprocessError,
    ScalarField, VectorField2,
};
use crate::quadrature::TriangleRule;
use crate::solver::{
    newton_solve, picard_solve, FieldNorms, NonlinearSettings, SolverError, SolverReport,
};

/// Coefficient `diag(a, b)` of the manufactured problem.
pub const MANUFACTURED_COEFFICIENT: DiagTensor2<f64> = DiagTensor2::new(1.0, 2.0);

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Postprocess(#[from] PostprocessError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl RunError {
    /// 1 for invalid input, 2 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Solver(SolverError::InvalidSettings(_)) => 1,
            Self::Solver(_) => 2,
            _ => 1,
        }
    }
}

/// Exact solution `sin(pi x / L) sin(pi y / L)` of the manufactured problem.
pub fn manufactured_exact(x: f64, y: f64, length: f64) -> f64 {
    (PI * x / length).sin() * (PI * y / length).sin()
}

pub fn coefficient(config: &RunConfig) -> Result<Coefficient, RunError> {
    Ok(match config.case {
        Case::Manufactured => Coefficient::Constant(MANUFACTURED_COEFFICIENT),
        _ => Coefficient::Material(MaterialModel::new(
            config.alpha,
            config.beta,
            config.xi_minus,
            config.xi_plus,
        )?),
    })
}

pub fn build_mesh(config: &RunConfig) -> Result<Triangulation2D, RunError> {
    Ok(generate_crossed_mesh(config.nx, config.ny, config.length)?)
}

/// Problem description for `config` on `mesh`.
pub fn problem<'m>(
    config: &RunConfig,
    mesh: &'m Triangulation2D,
) -> Result<ProblemSpec<'m>, RunError> {
    config.validate()?;
    let spec = ProblemSpec::new(mesh, coefficient(config)?)
        .epsilon(config.epsilon)
        .quadrature_order(config.quadrature_order);
    let length = config.length;
    let spec = if config.case == Case::Manufactured {
        let (a, b) = (MANUFACTURED_COEFFICIENT.d11, MANUFACTURED_COEFFICIENT.d22);
        let k = PI / length;
        // flux b u_y n_y equals -b k sin(k x) on both the top and the bottom
        spec.dirichlet(move |x, y| manufactured_exact(x, y, length))
            .neumann(move |x, _| -b * k * (k * x).sin())
            .source(move |x, y| (a + b) * k * k * manufactured_exact(x, y, length))
    } else {
        let data = config.dirichlet.expect("validated");
        let g = config.neumann;
        spec.dirichlet(move |x, _| data.eval(x, length))
            .neumann(move |_, _| g)
    };
    spec.validate()?;
    Ok(spec)
}

pub fn settings(config: &RunConfig) -> NonlinearSettings {
    NonlinearSettings {
        r_tol: config.r_tol,
        a_tol: config.a_tol,
        max_iterations: config.max_iterations,
        damping: config.damping,
        initial_guess: None,
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub xi: ComplexField,
    pub report: SolverReport,
    pub census: TypeCensus,
    pub clamping_active: bool,
}

pub fn solve(config: &RunConfig, mesh: &Triangulation2D) -> Result<Solution, RunError> {
    let spec = problem(config, mesh)?;
    let settings = settings(config);
    let (xi, report) = match config.solver {
        SolverKind::Newton => newton_solve(&spec, &settings)?,
        SolverKind::Picard => picard_solve(&spec, &settings)?,
    };
    let asm = Assembler::new(&spec)?;
    Ok(Solution {
        census: asm.type_census(&xi)?,
        clamping_active: asm.clamping_active(&xi),
        xi,
        report,
    })
}

pub struct RunOutcome {
    pub config: RunConfig,
    pub mesh: Triangulation2D,
    pub solution: Solution,
    pub gamma: ScalarField,
    pub yeff: VectorField2,
    pub report_text: String,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.solution.report.converged {
            0
        } else {
            2
        }
    }
}

/// Solves and reconstructs without writing anything.
pub fn simulate(config: &RunConfig) -> Result<RunOutcome, RunError> {
    let mesh = build_mesh(config)?;
    let solution = solve(config, &mesh)?;
    let coeff = coefficient(config)?;
    let n = mesh.vertex_count();
    let (gamma, yeff) = match coeff.material() {
        Some(m) => {
            let gamma = reconstruct_gamma(&mesh, m, &solution.xi, 0)?;
            let yeff = reconstruct_yeff(&mesh, m, &solution.xi, &gamma, 0)?;
            (gamma, yeff)
        }
        None => (
            ScalarField {
                values: vec![0.0; n],
            },
            VectorField2 {
                values: vec![[0.0; 2]; n],
            },
        ),
    };
    let report_text = format_report(config, &mesh, &coeff, &solution);
    Ok(RunOutcome {
        config: config.clone(),
        mesh,
        solution,
        gamma,
        yeff,
        report_text,
    })
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: PathBuf, text: &str) -> Result<(), RunError> {
    fs::write(&path, text).map_err(|source| RunError::Io { path, source })
}

/// Runs `config` and writes `<prefix>.vtk`, `<prefix>.csv` and
/// `<prefix>.report.txt`.
pub fn run(config: &RunConfig) -> Result<RunOutcome, RunError> {
    let outcome = simulate(config)?;
    let fields = ExportFields {
        mesh: &outcome.mesh,
        xi: &outcome.solution.xi,
        gamma: &outcome.gamma,
        yeff: &outcome.yeff,
    };
    let prefix = &config.output_prefix;
    export_vtk(&fields, &with_suffix(prefix, ".vtk"))?;
    export_csv(&fields, &with_suffix(prefix, ".csv"))?;
    write_text(with_suffix(prefix, ".report.txt"), &outcome.report_text)?;
    info!(
        "{} {} iterations in {:.3?}",
        config.solver.name(),
        outcome.solution.report.iterations,
        outcome.solution.report.wall_time
    );
    Ok(outcome)
}

/// Plain `key: value` report. Wall time is left out so that identical
/// inputs give identical files.
pub fn format_report(
    config: &RunConfig,
    mesh: &Triangulation2D,
    coeff: &Coefficient,
    s: &Solution,
) -> String {
    let mut out = String::new();
    let r = &s.report;
    let (bound, lipschitz) = match coeff {
        Coefficient::Material(m) => (m.bound(), m.lipschitz()),
        Coefficient::Constant(c) => (c.max_abs(), 0.0),
    };
    let re = s.xi.re();
    let im = s.xi.im();
    let history: Vec<String> = r
        .residual_history
        .iter()
        .map(|x| format!("{x:.6e}"))
        .collect();
    let total = s.census.total().max(1) as f64;
    let lines: Vec<(&str, String)> = vec![
        ("case", config.case.to_string()),
        ("solver", config.solver.name().into()),
        ("alpha", config.alpha.to_string()),
        ("beta", config.beta.to_string()),
        ("xi_minus", config.xi_minus.to_string()),
        ("xi_plus", config.xi_plus.to_string()),
        ("M", format!("{bound:.6e}")),
        ("K", format!("{lipschitz:.6e}")),
        ("epsilon", config.epsilon.to_string()),
        ("nx", config.nx.to_string()),
        ("ny", config.ny.to_string()),
        ("length", config.length.to_string()),
        ("h", format!("{:.6e}", mesh.h())),
        ("dofs", mesh.vertex_count().to_string()),
        ("triangles", mesh.triangle_count().to_string()),
        ("r_tol", config.r_tol.to_string()),
        ("converged", r.converged.to_string()),
        ("iterations", r.iterations.to_string()),
        ("picard_fallbacks", r.picard_fallbacks.to_string()),
        (
            "final_relative_residual",
            format!("{:.6e}", r.final_relative_residual),
        ),
        ("residual_history", history.join(" ")),
        ("census_elliptic", s.census.elliptic.to_string()),
        ("census_degenerate", s.census.degenerate.to_string()),
        ("census_hyperbolic", s.census.hyperbolic.to_string()),
        (
            "census_elliptic_share",
            format!("{:.6}", s.census.elliptic as f64 / total),
        ),
        (
            "census_hyperbolic_share",
            format!("{:.6}", s.census.hyperbolic as f64 / total),
        ),
        ("clamping_active", s.clamping_active.to_string()),
        (
            "xi_re_min",
            format!("{:.6e}", re.iter().copied().fold(f64::INFINITY, f64::min)),
        ),
        (
            "xi_re_max",
            format!(
                "{:.6e}",
                re.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            ),
        ),
        (
            "xi_im_max_abs",
            format!("{:.6e}", im.iter().fold(0.0f64, |m, x| m.max(x.abs()))),
        ),
    ];
    for (k, v) in lines {
        let _ = writeln!(out, "{k}: {v}");
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub dofs: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Distance to the next finer level, measured on the finer mesh.
    pub l2_diff: Option<f64>,
    pub v_diff: Option<f64>,
    pub l2_diff_rate: Option<f64>,
    pub v_diff_rate: Option<f64>,
    /// Error against the exact solution (manufactured case only).
    pub l2_error: Option<f64>,
    pub l2_error_rate: Option<f64>,
}

/// Locates points in a crossed mesh by cell arithmetic.
struct CrossedLocator<'a> {
    mesh: &'a Triangulation2D,
    nx: usize,
    ny: usize,
    length: f64,
}

impl CrossedLocator<'_> {
    fn eval(&self, values: &[Complex64], p: [f64; 2]) -> Complex64 {
        let (dx, dy) = (self.length / self.nx as f64, self.length / self.ny as f64);
        let i = ((p[0] / dx).floor() as usize).min(self.nx - 1);
        let j = ((p[1] / dy).floor() as usize).min(self.ny - 1);
        let mut best = (f64::NEG_INFINITY, Complex64::new(0.0, 0.0));
        for t in 4 * (j * self.nx + i)..4 * (j * self.nx + i) + 4 {
            let [a, b, c] = self.mesh.triangle_coords(t);
            let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
            let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
            let bary = [1.0 - l1 - l2, l1, l2];
            let worst = bary.iter().copied().fold(f64::INFINITY, f64::min);
            if worst > best.0 {
                let tri = self.mesh.triangles()[t];
                let v =
                    values[tri[0]] * bary[0] + values[tri[1]] * bary[1] + values[tri[2]] * bary[2];
                best = (worst, v);
            }
        }
        best.1
    }
}

fn rate(coarse: Option<f64>, fine: Option<f64>) -> Option<f64> {
    match (coarse, fine) {
        (Some(c), Some(f)) if c > 0.0 && f > 0.0 => Some((c / f).log2()),
        _ => None,
    }
}

fn l2_error_exact(mesh: &Triangulation2D, xi: &ComplexField, length: f64) -> f64 {
    let rule = TriangleRule::with_order(5).expect("built-in rule");
    let mut sum = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let c = mesh.triangle_coords(t);
        let area = mesh.signed_area(t);
        for (b, w) in rule.iter() {
            let x = b[0] * c[0][0] + b[1] * c[1][0] + b[2] * c[2][0];
            let y = b[0] * c[0][1] + b[1] * c[1][1] + b[2] * c[2][1];
            let uh = xi.values[tri[0]] * b[0] + xi.values[tri[1]] * b[1] + xi.values[tri[2]] * b[2];
            sum += area * w * (uh - manufactured_exact(x, y, length)).norm_sqr();
        }
    }
    sum.sqrt()
}

/// Solves on `nx * 2^k` for `k < levels` and tabulates Cauchy differences
/// between consecutive levels, their observed rates and, for the
/// manufactured case, errors against the exact solution.
pub fn convergence_study(config: &RunConfig) -> Result<Vec<StudyRow>, RunError> {
    if config.levels < 3 {
        return Err(ConfigError::Invalid(format!(
            "study needs at least 3 levels, got {}",
            config.levels
        ))
        .into());
    }
    let levels: Vec<RunConfig> = (0..config.levels)
        .map(|k| RunConfig {
            nx: config.nx << k,
            ny: config.ny << k,
            ..config.clone()
        })
        .collect();
    let solved: Vec<(Triangulation2D, Solution)> = levels
        .par_iter()
        .map(|c| {
            let mesh = build_mesh(c)?;
            let s = solve(c, &mesh)?;
            Ok((mesh, s))
        })
        .collect::<Result<_, RunError>>()?;

    let mut rows: Vec<StudyRow> = Vec::with_capacity(solved.len());
    for (k, (mesh, s)) in solved.iter().enumerate() {
        let (l2_diff, v_diff) = match solved.get(k + 1) {
            Some((fine_mesh, fine)) => {
                let locator = CrossedLocator {
                    mesh,
                    nx: levels[k].nx,
                    ny: levels[k].ny,
                    length: config.length,
                };
                let diff: Vec<Complex64> = fine_mesh
                    .vertices()
                    .iter()
                    .zip(&fine.xi.values)
                    .map(|(&p, &z)| z - locator.eval(&s.xi.values, p))
                    .collect();
                let spec = problem(&levels[k + 1], fine_mesh)?;
                let norms = FieldNorms::new(&Assembler::new(&spec)?);
                (Some(norms.l2(&diff)), Some(norms.v(&diff)))
            }
            None => (None, None),
        };
        let l2_error =
            (config.case == Case::Manufactured).then(|| l2_error_exact(mesh, &s.xi, config.length));
        rows.push(StudyRow {
            nx: levels[k].nx,
            ny: levels[k].ny,
            h: mesh.h(),
            dofs: mesh.vertex_count(),
            iterations: s.report.iterations,
            converged: s.report.converged,
            l2_diff,
            v_diff,
            l2_diff_rate: None,
            v_diff_rate: None,
            l2_error,
            l2_error_rate: None,
        });
    }
    for k in 1..rows.len() {
        rows[k].l2_diff_rate = rate(rows[k - 1].l2_diff, rows[k].l2_diff);
        rows[k].v_diff_rate = rate(rows[k - 1].v_diff, rows[k].v_diff);
        rows[k].l2_error_rate = rate(rows[k - 1].l2_error, rows[k].l2_error);
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_default()
}

pub fn study_csv(rows: &[StudyRow]) -> String {
    let mut out = String::from("nx,ny,h,dofs,iterations,converged,l2_diff,l2_diff_rate,v_diff,v_diff_rate,l2_error,l2_error_rate\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6e},{},{},{},{},{},{},{},{},{}",
            r.nx,
            r.ny,
            r.h,
            r.dofs,
            r.iterations,
            r.converged,
            opt(r.l2_diff),
            opt(r.l2_diff_rate),
            opt(r.v_diff),
            opt(r.v_diff_rate),
            opt(r.l2_error),
            opt(r.l2_error_rate),
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub converged: bool,
    pub iterations: usize,
    pub v_norm: f64,
    pub im_l2: f64,
    /// Failure message when the solve did not return a field.
    pub error: Option<String>,
}

/// One solve per dissipation value; rows keep the input order and a failed
/// row does not stop the sweep.
pub fn epsilon_sweep(config: &RunConfig, epsilons: &[f64]) -> Result<Vec<SweepRow>, RunError> {
    let mesh = build_mesh(config)?;
    let rows = epsilons
        .par_iter()
        .map(|&epsilon| {
            let c = RunConfig {
                epsilon,
                ..config.clone()
            };
            let attempt = || -> Result<SweepRow, RunError> {
                let s = solve(&c, &mesh)?;
                let spec = problem(&c, &mesh)?;
                let norms = FieldNorms::new(&Assembler::new(&spec)?);
                let im: Vec<Complex64> =
                    s.xi.im()
                        .into_iter()
                        .map(|v| Complex64::new(v, 0.0))
                        .collect();
                Ok(SweepRow {
                    epsilon,
                    converged: s.report.converged,
                    iterations: s.report.iterations,
                    v_norm: norms.v(&s.xi.values),
                    im_l2: norms.l2(&im),
                    error: None,
                })
            };
            attempt().unwrap_or_else(|e| SweepRow {
                epsilon,
                converged: false,
                iterations: 0,
                v_norm: f64::NAN,
                im_l2: f64::NAN,
                error: Some(e.to_string()),
            })
        })
        .collect();
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("epsilon,converged,iterations,v_norm,im_l2,error\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6e},{:.6e},{}",
            r.epsilon,
            r.converged,
            r.iterations,
            r.v_norm,
            r.im_l2,
            r.error.as_deref().unwrap_or("").replace(',', ";")
        );
    }
    out
}

pub fn write_study(config: &RunConfig, rows: &[StudyRow]) -> Result<PathBuf, RunError> {
    let path = with_suffix(&config.output_prefix, ".study.csv");
    write_text(path.clone(), &study_csv(rows))?;
    Ok(path)
}

pub fn write_sweep(config: &RunConfig, rows: &[SweepRow]) -> Result<PathBuf, RunError> {
    let path = with_suffix(&config.output_prefix, ".sweep.csv");
    write_text(path.clone(), &sweep_csv(rows))?;
    Ok(path)
}
