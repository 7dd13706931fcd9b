//! Finite element solver for the slit-opening equation of rhombi-slit
//! kirigami: P1 complex elements with artificial dissipation, Newton and
//! Picard nonlinear iterations, and least-squares reconstruction of the
//! rotation field and effective deformation.

pub mod assembly;
pub mod config;
pub mod experiments;
pub mod material;
pub mod mesh;
pub mod postprocess;
pub mod quadrature;
pub mod solver;
pub mod sparse;

pub use assembly::{
    assemble_jacobian, assemble_load, assemble_operator, assemble_residual, local_stiffness,
    Assembler, AssemblyError, Coefficient, ComplexField, ProblemSpec, TypeCensus,
};
pub use config::{Case, ConfigError, DirichletData, RunConfig, SolverKind};
pub use experiments::{convergence_study, epsilon_sweep, run, simulate, RunError, RunOutcome};
pub use material::{DiagTensor2, MaterialError, MaterialModel, PdeType};
pub use mesh::{generate_crossed_mesh, BoundaryTag, MeshError, Triangulation2D};
pub use postprocess::{
    export_csv, export_vtk, least_squares_potential, reconstruct_gamma, reconstruct_yeff,
    ExportFields, PostprocessError, ScalarField, VectorField2,
};
pub use solver::{
    newton_solve, picard_solve, solve_linear, FieldNorms, NonlinearSettings, SolverError,
    SolverReport,
};
pub use sparse::{CsrMatrix, LinearSolveError, SparseComplexMatrix, SparseLu};
