//! Centralized numeric tolerances.
//!
//! Every module pulls its thresholds from here so a tolerance has one
//! definition, one rationale, and one place to change.

/// Distance to a facet below which a point is treated as lying on that
/// facet and is re-stratified to the face. Also the default tolerance for
/// active-piece detection in piecewise linear functions.
pub const BOUNDARY_TOL: f64 = 1e-9;

/// Convergence threshold for Newton solves: the Euclidean norm of the
/// gradient of the concave objective.
pub const NEWTON_TOL: f64 = 1e-12;

/// Iteration cap for Newton solves; hitting it is reported as failure,
/// never silently accepted.
pub const NEWTON_MAX_ITER: usize = 100;

/// Armijo sufficient-decrease constant for backtracking line search.
pub const ARMIJO_C1: f64 = 1e-4;

/// Relative tolerance for the adaptive Gauss-Legendre quadrature that
/// computes norming constants.
pub const QUAD_REL_TOL: f64 = 1e-12;

/// Acceptance threshold for the subdifferential condition at corner
/// solutions: the residual of `rho - grad u0(x) - t*xi` with `xi` in the
/// subdifferential.
pub const KKT_TOL: f64 = 1e-8;

/// Slack allowed on barycentric coordinates when testing hull membership
/// in floating point.
pub const HULL_COORD_TOL: f64 = 1e-7;
