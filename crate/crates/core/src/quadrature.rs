//! Adaptive tensor-product Gauss-Legendre quadrature.
//!
//! Base cells come from caller-supplied per-axis breakpoints (so integrals
//! can be pre-concentrated around a known peak); each cell is accepted when
//! its 15-point tensor estimate agrees with the sum over its 2^m children
//! within the cell's share of the absolute error budget, otherwise it splits.
//! The children's sum is returned on acceptance (one order higher).

use std::sync::OnceLock;

const GL_N: usize = 15;
const MAX_DEPTH: usize = 36;

/// Nodes and weights of the 15-point Gauss-Legendre rule on [-1, 1],
/// computed once by Newton iteration on the Legendre recurrence.
pub fn gl15() -> &'static ([f64; GL_N], [f64; GL_N]) {
    static CACHE: OnceLock<([f64; GL_N], [f64; GL_N])> = OnceLock::new();
    CACHE.get_or_init(|| {
        let mut nodes = [0.0; GL_N];
        let mut weights = [0.0; GL_N];
        let n = GL_N;
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre(n, x);
            nodes[n - 1 - i] = x;
            weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    })
}

/// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

#[derive(Clone, Debug)]
pub struct QuadOutcome {
    pub value: f64,
    /// Sum of accepted parent-child discrepancies: a conservative error bound.
    pub err_est: f64,
    pub evals: usize,
    /// True when some cell hit the depth cap without meeting its budget.
    pub depth_exhausted: bool,
}

struct Cell {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

/// Integrates `f` over the box given by per-axis breakpoints. `rel_tol` is
/// relative to the first-pass whole-box estimate. Breakpoints per axis must
/// be strictly increasing with at least two entries.
pub fn integrate(
    f: &dyn Fn(&[f64]) -> f64,
    axes: &[Vec<f64>],
    rel_tol: f64,
) -> QuadOutcome {
    let m = axes.len();
    assert!(m > 0, "integration domain must have positive dimension");
    for bp in axes {
        assert!(bp.len() >= 2 && bp.windows(2).all(|w| w[1] > w[0]));
    }
    let mut cells = vec![Cell { lo: Vec::new(), hi: Vec::new() }];
    for bp in axes {
        let mut next = Vec::new();
        for c in &cells {
            for w in bp.windows(2) {
                let mut lo = c.lo.clone();
                let mut hi = c.hi.clone();
                lo.push(w[0]);
                hi.push(w[1]);
                next.push(Cell { lo, hi });
            }
        }
        cells = next;
    }
    let mut evals = 0usize;
    let estimates: Vec<f64> = cells.iter().map(|c| tensor_rule(f, c, &mut evals)).collect();
    let first_pass: f64 = estimates.iter().sum();
    let scale = first_pass.abs().max(1e-300);
    let budget_each = rel_tol * scale / cells.len() as f64;
    let mut value = 0.0;
    let mut err_est = 0.0;
    let mut depth_exhausted = false;
    for (cell, est) in cells.iter().zip(estimates) {
        let r = refine(f, cell, est, budget_each, 0, &mut evals);
        value += r.0;
        err_est += r.1;
        depth_exhausted |= r.2;
    }
    QuadOutcome { value, err_est, evals, depth_exhausted }
}

fn refine(
    f: &dyn Fn(&[f64]) -> f64,
    cell: &Cell,
    estimate: f64,
    budget: f64,
    depth: usize,
    evals: &mut usize,
) -> (f64, f64, bool) {
    let m = cell.lo.len();
    let nchildren = 1usize << m;
    let mut child_cells = Vec::with_capacity(nchildren);
    for mask in 0..nchildren {
        let mut lo = Vec::with_capacity(m);
        let mut hi = Vec::with_capacity(m);
        for j in 0..m {
            let mid = 0.5 * (cell.lo[j] + cell.hi[j]);
            if mask >> j & 1 == 0 {
                lo.push(cell.lo[j]);
                hi.push(mid);
            } else {
                lo.push(mid);
                hi.push(cell.hi[j]);
            }
        }
        child_cells.push(Cell { lo, hi });
    }
    let child_estimates: Vec<f64> =
        child_cells.iter().map(|c| tensor_rule(f, c, evals)).collect();
    let children_sum: f64 = child_estimates.iter().sum();
    let disagreement = (estimate - children_sum).abs();
    // Budgets halve per split while a concentrated peak hands one child the
    // whole value, so a pure budget test can recurse forever; the roundoff
    // floor of the local value is the honest stopping point.
    let floor = 64.0 * f64::EPSILON * children_sum.abs();
    if disagreement <= budget.max(floor) {
        return (children_sum, disagreement, false);
    }
    if depth >= MAX_DEPTH {
        return (children_sum, disagreement, true);
    }
    let child_budget = budget / nchildren as f64;
    let mut value = 0.0;
    let mut err = 0.0;
    let mut exhausted = false;
    for (c, est) in child_cells.iter().zip(child_estimates) {
        let r = refine(f, c, est, child_budget, depth + 1, evals);
        value += r.0;
        err += r.1;
        exhausted |= r.2;
    }
    (value, err, exhausted)
}

fn tensor_rule(f: &dyn Fn(&[f64]) -> f64, cell: &Cell, evals: &mut usize) -> f64 {
    let (nodes, weights) = gl15();
    let m = cell.lo.len();
    let mut idx = vec![0usize; m];
    let mut point = vec![0.0f64; m];
    let half: Vec<f64> = (0..m).map(|j| 0.5 * (cell.hi[j] - cell.lo[j])).collect();
    let mid: Vec<f64> = (0..m).map(|j| 0.5 * (cell.hi[j] + cell.lo[j])).collect();
    let jac: f64 = half.iter().product();
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for j in 0..m {
            point[j] = mid[j] + half[j] * nodes[idx[j]];
            w *= weights[idx[j]];
        }
        total += w * f(&point);
        *evals += 1;
        // Mixed-radix increment over the tensor grid.
        let mut j = 0;
        loop {
            if j == m {
                return total * jac;
            }
            idx[j] += 1;
            if idx[j] < GL_N {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// Equal subdivision helper: `panels` panels spanning [a, b].
pub fn linspace_breaks(a: f64, b: f64, panels: usize) -> Vec<f64> {
    assert!(b > a && panels >= 1);
    (0..=panels).map(|i| a + (b - a) * i as f64 / panels as f64).collect()
}
