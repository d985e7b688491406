//! Damped Newton maximization of smooth strictly concave objectives.

use crate::tol::{ARMIJO_C1, NEWTON_MAX_ITER, NEWTON_TOL};
use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug)]
pub struct NewtonResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Maximizes a strictly concave objective from `x0`. The closure returns
/// `(value, gradient, hessian)` or `None` where the objective is undefined;
/// line search backtracks away from undefined points. Fails when the
/// iteration cap is reached or no uphill step of representable size exists.
pub fn maximize_concave<F>(x0: DVector<f64>, f: F, tol: f64) -> Result<NewtonResult, NewtonFailure>
where
    F: Fn(&DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)>,
{
    let mut x = x0;
    let (mut value, mut grad, mut hess) = f(&x).ok_or(NewtonFailure::UndefinedAtStart)?;
    if x.is_empty() {
        return Ok(NewtonResult { x, value, grad_norm: 0.0, iterations: 0 });
    }
    for it in 0..NEWTON_MAX_ITER {
        let grad_norm = grad.norm();
        if grad_norm <= tol {
            return Ok(NewtonResult { x, value, grad_norm, iterations: it });
        }
        let step = solve_spd(&-&hess, &grad).unwrap_or_else(|| grad.clone());
        let slope = grad.dot(&step);
        // The Newton direction of a concave objective is uphill; fall back
        // to the gradient if numerics say otherwise.
        let (step, slope) = if slope > 0.0 { (step, slope) } else { (grad.clone(), grad_norm * grad_norm) };
        let mut s = 1.0f64;
        let mut accepted = false;
        while s >= 1e-20 {
            let cand = &x + &step * s;
            if cand == x {
                break;
            }
            if let Some((v, g, h)) = f(&cand) {
                let armijo = v >= value + ARMIJO_C1 * s * slope;
                // Terminal phase: once the true improvement falls below the
                // value's own roundoff, Armijo turns into noise; accept any
                // step that clearly contracts the gradient without losing
                // more value than roundoff can explain.
                let polish = g.norm() <= 0.5 * grad_norm
                    && v >= value - 1e-13 * (1.0 + value.abs());
                if armijo || polish {
                    x = cand;
                    value = v;
                    grad = g;
                    hess = h;
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if !accepted {
            // No uphill progress representable: accept only if converged.
            let grad_norm = grad.norm();
            if grad_norm <= tol * 10.0 {
                return Ok(NewtonResult { x, value, grad_norm, iterations: it });
            }
            return Err(NewtonFailure::StalledLineSearch { grad_norm });
        }
    }
    Err(NewtonFailure::IterationCap { grad_norm: grad.norm() })
}

pub fn maximize_concave_default<F>(x0: DVector<f64>, f: F) -> Result<NewtonResult, NewtonFailure>
where
    F: Fn(&DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)>,
{
    maximize_concave(x0, f, NEWTON_TOL)
}

/// Solves `a x = b` for symmetric positive definite `a`, with a ridge
/// retry when Cholesky fails on the edge of positive definiteness.
fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(b));
    }
    let n = a.nrows();
    let scale = a.diagonal().amax().max(1e-300);
    let ridged = a + DMatrix::identity(n, n) * (scale * 1e-12);
    ridged.cholesky().map(|c| c.solve(b))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NewtonFailure {
    UndefinedAtStart,
    StalledLineSearch { grad_norm: f64 },
    IterationCap { grad_norm: f64 },
}

impl std::fmt::Display for NewtonFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::UndefinedAtStart => write!(f, "objective undefined at the starting point"),
            Self::StalledLineSearch { grad_norm } => {
                write!(f, "line search stalled with gradient norm {grad_norm:.3e}")
            }
            Self::IterationCap { grad_norm } => {
                write!(f, "iteration cap reached with gradient norm {grad_norm:.3e}")
            }
        }
    }
}

impl std::error::Error for NewtonFailure {}
