//! Linear solves, Picard iteration and damped Newton iteration.

use std::time::{Duration, Instant};

use log::{debug, warn};
use num_complex::Complex64;
use thiserror::Error;

use crate::assembly::{Assembler, AssemblyError, ComplexField, ProblemSpec};
use crate::sparse::{norm2, CsrMatrix, LinearSolveError, SparseComplexMatrix, SparseLu};

/// Maximum number of step halvings in the Newton line search.
pub const MAX_HALVINGS: usize = 8;
/// A step reducing the residual by less than this fraction counts as slow.
pub const STAGNATION: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Linear(#[from] LinearSolveError),
    #[error(
        "Newton Jacobian is singular at iteration {iteration} (pivot {pivot}); \
         the linearized operator is not invertible here, try a larger epsilon"
    )]
    SingularJacobian { iteration: usize, pivot: usize },
    #[error("invalid solver settings: {0}")]
    InvalidSettings(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearSettings {
    pub r_tol: f64,
    pub a_tol: f64,
    pub max_iterations: usize,
    /// Initial Newton step length before halving.
    pub damping: f64,
    /// Defaults to zero in the interior with the Dirichlet data on the boundary.
    pub initial_guess: Option<ComplexField>,
}

impl Default for NonlinearSettings {
    fn default() -> Self {
        Self {
            r_tol: 1e-8,
            a_tol: 1e-12,
            max_iterations: 50,
            damping: 1.0,
            initial_guess: None,
        }
    }
}

impl NonlinearSettings {
    pub fn with_r_tol(r_tol: f64) -> Self {
        Self {
            r_tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.r_tol > 0.0 && self.r_tol < 1.0) {
            return Err(SolverError::InvalidSettings(format!(
                "r_tol must lie in (0, 1), got {}",
                self.r_tol
            )));
        }
        if !(self.a_tol >= 0.0) {
            return Err(SolverError::InvalidSettings(format!(
                "a_tol must be non-negative, got {}",
                self.a_tol
            )));
        }
        if self.max_iterations == 0 {
            return Err(SolverError::InvalidSettings(
                "max_iterations must be at least 1".into(),
            ));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(SolverError::InvalidSettings(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        Ok(())
    }

    fn start(&self, spec: &ProblemSpec) -> Result<ComplexField, SolverError> {
        let mut xi = match &self.initial_guess {
            Some(g) => {
                spec.check_field(g)?;
                g.clone()
            }
            None => spec.initial_guess(0.0),
        };
        spec.impose_dirichlet(&mut xi);
        Ok(xi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub iterations: usize,
    /// Residual 2-norms, starting with the initial guess.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub final_relative_residual: f64,
    pub wall_time: Duration,
    /// Picard sweeps substituted for Newton steps.
    pub picard_fallbacks: usize,
}

impl SolverReport {
    fn new(history: Vec<f64>, converged: bool, start: Instant, fallbacks: usize) -> Self {
        let first = history[0];
        let last = *history.last().unwrap();
        Self {
            iterations: history.len() - 1,
            final_relative_residual: if first > 0.0 { last / first } else { 0.0 },
            residual_history: history,
            converged,
            wall_time: start.elapsed(),
            picard_fallbacks: fallbacks,
        }
    }
}

/// Mass and stiffness matrices for the `L2` and `V = H1` norms.
pub struct FieldNorms {
    mass: CsrMatrix<f64>,
    stiffness: CsrMatrix<f64>,
}

fn quadratic_form(m: &CsrMatrix<f64>, z: &[Complex64]) -> f64 {
    let re: Vec<f64> = z.iter().map(|c| c.re).collect();
    let im: Vec<f64> = z.iter().map(|c| c.im).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    dot(&re, &m.mul_vec(&re)) + dot(&im, &m.mul_vec(&im))
}

impl FieldNorms {
    pub fn new(asm: &Assembler) -> Self {
        Self {
            mass: asm.mass(),
            stiffness: asm.stiffness(),
        }
    }

    pub fn mass(&self) -> &CsrMatrix<f64> {
        &self.mass
    }

    pub fn stiffness(&self) -> &CsrMatrix<f64> {
        &self.stiffness
    }

    pub fn l2(&self, z: &[Complex64]) -> f64 {
        quadratic_form(&self.mass, z).max(0.0).sqrt()
    }

    /// `||grad z||^2`
    pub fn gradient_sq(&self, z: &[Complex64]) -> f64 {
        quadratic_form(&self.stiffness, z)
    }

    pub fn v(&self, z: &[Complex64]) -> f64 {
        (quadratic_form(&self.mass, z) + quadratic_form(&self.stiffness, z))
            .max(0.0)
            .sqrt()
    }

    pub fn v_distance(&self, a: &ComplexField, b: &ComplexField) -> f64 {
        let d: Vec<Complex64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
        self.v(&d)
    }
}

/// Direct solve `A x = b` by sparse LU with iterative refinement.
pub fn solve_linear(
    a: &SparseComplexMatrix,
    b: &[Complex64],
) -> Result<Vec<Complex64>, LinearSolveError> {
    if b.len() != a.nrows() {
        return Err(LinearSolveError::DimensionMismatch {
            expected: a.nrows(),
            got: b.len(),
        });
    }
    let lu = SparseLu::factorize(a)?;
    let x = lu.solve_refined(a, b)?;
    let r: Vec<Complex64> = a.mul_vec(&x).iter().zip(b).map(|(p, q)| p - q).collect();
    let rel = norm2(&r) / norm2(b).max(f64::MIN_POSITIVE);
    if rel > 1e-10 {
        warn!("linear solve relative residual {rel:.3e} exceeds 1e-10");
    }
    Ok(x)
}

fn picard_step(
    asm: &Assembler,
    xi: &ComplexField,
    load: &[Complex64],
) -> Result<ComplexField, SolverError> {
    let (a, rhs) = asm.lifted_system(xi, load)?;
    Ok(ComplexField {
        values: solve_linear(&a, &rhs)?,
    })
}

/// Fixed-point iteration: each step solves the problem with the coefficient
/// frozen at the previous iterate.
pub fn picard_solve(
    spec: &ProblemSpec,
    settings: &NonlinearSettings,
) -> Result<(ComplexField, SolverReport), SolverError> {
    let start = Instant::now();
    settings.validate()?;
    let asm = Assembler::new(spec)?;
    let norms = FieldNorms::new(&asm);
    let load = asm.load();
    let mut xi = settings.start(spec)?;
    let f0 = norm2(&asm.residual(&xi, &load)?);
    let mut history = vec![f0];
    let target = settings.r_tol * f0 + settings.a_tol;
    if f0 <= target {
        return Ok((xi, SolverReport::new(history, true, start, 0)));
    }
    let mut first_step = None;
    for k in 1..=settings.max_iterations {
        let next = picard_step(&asm, &xi, &load)?;
        let step = norms.v_distance(&next, &xi);
        let first = *first_step.get_or_insert(step);
        xi = next;
        let f = norm2(&asm.residual(&xi, &load)?);
        history.push(f);
        debug!("picard {k}: residual {f:.3e}, step {step:.3e}");
        if f <= target || step <= settings.r_tol * first {
            return Ok((xi, SolverReport::new(history, true, start, 0)));
        }
    }
    Ok((xi, SolverReport::new(history, false, start, 0)))
}

fn split(r: &[Complex64]) -> Vec<f64> {
    r.iter().flat_map(|z| [z.re, z.im]).collect()
}

/// Damped Newton iteration on the real and imaginary parts.
///
/// Each step halves its length up to [`MAX_HALVINGS`] times until the
/// residual decreases. If no length decreases it, or after two consecutive
/// slow steps, one Picard sweep is taken instead.
pub fn newton_solve(
    spec: &ProblemSpec,
    settings: &NonlinearSettings,
) -> Result<(ComplexField, SolverReport), SolverError> {
    let start = Instant::now();
    settings.validate()?;
    let asm = Assembler::new(spec)?;
    let load = asm.load();
    let mut xi = settings.start(spec)?;
    let mut r = asm.residual(&xi, &load)?;
    let mut f = norm2(&r);
    let mut history = vec![f];
    let target = settings.r_tol * f + settings.a_tol;
    let mut fallbacks = 0;
    let mut slow = 0;
    if f <= target {
        return Ok((xi, SolverReport::new(history, true, start, 0)));
    }

    for k in 1..=settings.max_iterations {
        let mut accepted = None;
        if slow < 2 {
            let jac = asm.jacobian(&xi)?;
            let lu = SparseLu::factorize(&jac).map_err(|e| match e {
                LinearSolveError::Singular { pivot, .. } => SolverError::SingularJacobian {
                    iteration: k,
                    pivot,
                },
                other => SolverError::Linear(other),
            })?;
            let rhs: Vec<f64> = split(&r).into_iter().map(|x| -x).collect();
            let delta = lu.solve_refined(&jac, &rhs)?;
            let mut length = settings.damping;
            for _ in 0..=MAX_HALVINGS {
                let trial = ComplexField {
                    values: xi
                        .values
                        .iter()
                        .enumerate()
                        .map(|(i, z)| z + Complex64::new(delta[2 * i], delta[2 * i + 1]) * length)
                        .collect(),
                };
                let rt = asm.residual(&trial, &load)?;
                let ft = norm2(&rt);
                if ft < f {
                    accepted = Some((trial, rt, ft));
                    break;
                }
                length *= 0.5;
            }
        }
        let newton_step = accepted.is_some();
        let (next, rn, fnext) = match accepted {
            Some(step) => step,
            None => {
                fallbacks += 1;
                debug!("newton {k}: Picard fallback");
                let next = picard_step(&asm, &xi, &load)?;
                let rn = asm.residual(&next, &load)?;
                let fnext = norm2(&rn);
                (next, rn, fnext)
            }
        };
        slow = if newton_step && fnext > (1.0 - STAGNATION) * f {
            slow + 1
        } else {
            0
        };
        debug!("newton {k}: residual {fnext:.3e}");
        xi = next;
        r = rn;
        f = fnext;
        history.push(f);
        if f <= target {
            return Ok((xi, SolverReport::new(history, true, start, fallbacks)));
        }
    }
    Ok((xi, SolverReport::new(history, false, start, fallbacks)))
}
