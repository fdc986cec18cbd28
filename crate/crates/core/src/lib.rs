//! Distributed projected primal-dual dynamics for resource allocation with
//! cardinality-constrained (budgeted) uncertainty.
//!
//! The core is generic over [`Real`] (`f32` or `f64`); the `*F64` aliases
//! below fix the scalar for the common case.

pub mod certify;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod io;
pub mod oracle;
pub mod problem;
pub mod robust;
pub mod scalar;

pub use certify::{
    certify, consensus_residuals, equilibrium_residual, kkt_residuals, kkt_residuals_with, lyapunov_components,
    lyapunov_lower_bound, lyapunov_series, lyapunov_value, CertificationReport, KktCandidate, KktResiduals,
    LyapunovSeries, ReferenceKind,
};
pub use dynamics::{
    default_init, simulate, step, vector_field, Block, ConsensusResiduals, Dynamics, IntegratorConfig,
    MonitorRow, SwarmDerivative, SwarmState, Trajectory,
};
pub use error::{Error, Result};
pub use geometry::{
    certifying_subgradient, objective_value, project, projection_variational_residual, prox_l1_on_set, subgradient,
    subgradient_nearest, ProjectionTarget,
};
pub use io::{
    oracle_from_json, oracle_to_json, problem_from_json, problem_to_json, state_from_json, state_to_json,
    ProblemDocument, StateDocument, FORMAT_VERSION,
};
pub use oracle::{centralized_solve, cross_validate, CrossValidation, OracleSolution};
pub use problem::{
    build_laplacian, demo_problem, validate_problem, Check, CommGraph, Finding, Laplacian, LocalSet,
    ObjectiveSpec, RobustAllocationProblem, Severity, UncertainConstraintData, ValidationReport,
};
pub use robust::{
    dual_feasibility_eval, robust_primal_eval, uncertainty_membership, worst_case_bruteforce,
    worst_case_greedy, FeasibilityMargins, WorstCaseResult,
};
pub use scalar::Real;

pub type ProblemF64 = RobustAllocationProblem<f64>;
pub type SwarmStateF64 = SwarmState<f64>;
pub type TrajectoryF64 = Trajectory<f64>;
pub type CertificationReportF64 = CertificationReport<f64>;
pub type OracleSolutionF64 = OracleSolution<f64>;
