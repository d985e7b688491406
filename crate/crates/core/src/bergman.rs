//! Finite-level objects: norming constants, the state density, the discrete
//! measures and their time tilts, Bernstein evaluation, and the finite-level
//! geodesic potentials with exact first derivatives.

use std::collections::HashMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::exact::{self, Rat};
use crate::plconvex::PlConvex;
use crate::polytope::Stratum;
use crate::potentials::{OrbitPoint, SolveError, ToricPotential};
use crate::quadrature;
use crate::tol;

/// Half-width of the well-resolved quadrature core, in saddle-point standard
/// deviations of the local Gaussian model.
const CORE_SIGMAS: f64 = 12.0;
const CORE_PANELS: usize = 4;
/// Interior integrands can leave the Gaussian regime and decay only at the
/// lattice rate (at least 1 per unit rho), so each side keeps a flank cell
/// wide enough that the truncated tail is below e^-34.
const INTERIOR_FLANK: f64 = 34.0;
/// Boundary integrands peak away from the proxy saddle; two flank cells per
/// side leave room for the adaptive refinement to chase the true peak while
/// keeping the truncated tail below e^-(48/sqrt(2)).
const BOUNDARY_FLANK_NEAR: f64 = 12.0;
const BOUNDARY_FLANK_FAR: f64 = 48.0;

#[derive(Clone, Debug)]
pub struct QuadSettings {
    pub rel_tol: f64,
    pub max_level_1d: u32,
    pub max_level_2d: u32,
}

impl Default for QuadSettings {
    fn default() -> Self {
        Self { rel_tol: tol::QUAD_REL_TOL, max_level_1d: 128, max_level_2d: 48 }
    }
}

#[derive(Clone, Debug)]
pub enum BergmanError {
    /// Requested level exceeds the configured budget for this dimension.
    LevelBudget { level: u32, cap: u32 },
    /// Adaptive refinement hit the depth cap before meeting its budget.
    QuadratureFailure { alpha: Vec<i64>, rel_err: f64 },
    /// The saddle solve behind a quadrature box did not converge.
    SaddleFailure { alpha: Vec<i64>, source: SolveError },
    /// Cached records do not match the lattice of the polytope at this level.
    RecordMismatch { expected: usize, got: usize },
}

impl fmt::Display for BergmanError {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BergmanError::LevelBudget { level, cap } => {
                write!(out, "level {level} exceeds configured cap {cap}")
            }
            BergmanError::QuadratureFailure { alpha, rel_err } => {
                write!(out, "quadrature for alpha {alpha:?} stalled at relative error {rel_err:.3e}")
            }
            BergmanError::SaddleFailure { alpha, source } => {
                write!(out, "saddle solve for alpha {alpha:?} failed: {source}")
            }
            BergmanError::RecordMismatch { expected, got } => {
                write!(out, "cache holds {got} records, lattice has {expected}")
            }
        }
    }
}

impl std::error::Error for BergmanError {}

/// Norming constants of one level: log Q(alpha) for every lattice point of
/// the dilated polytope, alphas in lexicographic order.
#[derive(Clone, Debug)]
pub struct QTable {
    level: u32,
    alphas: Vec<Vec<i64>>,
    log_q: Vec<f64>,
    strata: Vec<Stratum>,
    rel_tol: f64,
    total_evals: usize,
    max_rel_err: f64,
}

struct AlphaQ {
    log_q: f64,
    rel_err: f64,
    evals: usize,
}

impl QTable {
    /// Builds the table by per-alpha adaptive quadrature of
    /// integral of exp(<alpha, rho> - level*phi(rho)) det D^2 phi(rho) d rho
    /// over R^m. The constant angular factor (2 pi)^m is dropped; it cancels
    /// in every downstream ratio. Alphas parallelize independently; results
    /// are collected in lattice order, so output is deterministic.
    pub fn build(
        pot: &ToricPotential,
        level: u32,
        settings: &QuadSettings,
    ) -> Result<QTable, BergmanError> {
        let m = pot.polytope().dim();
        let cap = if m <= 1 { settings.max_level_1d } else { settings.max_level_2d };
        if level > cap {
            return Err(BergmanError::LevelBudget { level, cap });
        }
        let alphas = pot.polytope().lattice_points(level);
        let boundary = boundary_assignment(pot, level);
        let results: Vec<Result<AlphaQ, BergmanError>> = alphas
            .par_iter()
            .map(|alpha| match boundary.get(alpha.as_slice()) {
                None => integrate_alpha(pot, alpha, level, settings, None),
                Some((chart, y)) => integrate_alpha(pot, alpha, level, settings, Some((*chart, y))),
            })
            .collect();
        let mut log_q = Vec::with_capacity(alphas.len());
        let mut strata = Vec::with_capacity(alphas.len());
        let mut total_evals = 0usize;
        let mut max_rel_err = 0.0f64;
        for (alpha, r) in alphas.iter().zip(results) {
            let aq = r?;
            log_q.push(aq.log_q);
            total_evals += aq.evals;
            max_rel_err = max_rel_err.max(aq.rel_err);
            strata.push(match boundary.get(alpha.as_slice()) {
                None => Stratum::Interior,
                Some((chart, _)) => pot.charts()[*chart].stratum.clone(),
            });
        }
        Ok(QTable {
            level,
            alphas,
            log_q,
            strata,
            rel_tol: settings.rel_tol,
            total_evals,
            max_rel_err,
        })
    }

    /// Rebuilds a table from cached (alpha, log Q) records. The records must
    /// cover the level lattice exactly and arrive in lexicographic order.
    pub fn from_records(
        pot: &ToricPotential,
        level: u32,
        alphas: Vec<Vec<i64>>,
        log_q: Vec<f64>,
        rel_tol: f64,
    ) -> Result<QTable, BergmanError> {
        let expected = pot.polytope().lattice_points(level);
        if alphas != expected || log_q.len() != alphas.len() {
            return Err(BergmanError::RecordMismatch {
                expected: expected.len(),
                got: alphas.len().min(log_q.len()),
            });
        }
        let boundary = boundary_assignment(pot, level);
        let strata = alphas
            .iter()
            .map(|a| match boundary.get(a.as_slice()) {
                None => Stratum::Interior,
                Some((chart, _)) => pot.charts()[*chart].stratum.clone(),
            })
            .collect();
        Ok(QTable { level, alphas, log_q, strata, rel_tol, total_evals: 0, max_rel_err: rel_tol })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn alphas(&self) -> &[Vec<i64>] {
        &self.alphas
    }

    pub fn log_q(&self) -> &[f64] {
        &self.log_q
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn rel_tol(&self) -> f64 {
        self.rel_tol
    }

    pub fn total_evals(&self) -> usize {
        self.total_evals
    }

    pub fn max_rel_err(&self) -> f64 {
        self.max_rel_err
    }

    pub fn index_of(&self, alpha: &[i64]) -> Option<usize> {
        self.alphas.binary_search_by(|a| a.as_slice().cmp(alpha)).ok()
    }

    /// Panics when alpha is not a lattice point of this level: every caller
    /// feeds alphas taken from the polytope's own lattice.
    pub fn log_q_of(&self, alpha: &[i64]) -> f64 {
        self.log_q[self.index_of(alpha).expect("alpha outside the level lattice")]
    }
}

/// Minimal stratum and chart coordinates for every boundary lattice point of
/// the dilated polytope. Charts are scanned from vertices upward so the first
/// assignment wins, which is the smallest face containing the point.
fn boundary_assignment(
    pot: &ToricPotential,
    level: u32,
) -> HashMap<Vec<i64>, (usize, Vec<i64>)> {
    let mut map: HashMap<Vec<i64>, (usize, Vec<i64>)> = HashMap::new();
    for idx in (1..pot.charts().len()).rev() {
        let (ambient, local) = pot.level_lattice(idx, level);
        for (a, y) in ambient.into_iter().zip(local) {
            map.entry(a).or_insert((idx, y));
        }
    }
    map
}

fn integrate_alpha(
    pot: &ToricPotential,
    alpha: &[i64],
    level: u32,
    settings: &QuadSettings,
    boundary: Option<(usize, &Vec<i64>)>,
) -> Result<AlphaQ, BergmanError> {
    let m = pot.polytope().dim();
    let n = level as f64;
    let fail = |source: SolveError| BergmanError::SaddleFailure {
        alpha: alpha.to_vec(),
        source,
    };
    // Exact height of the exponent's supremum, solved on alpha's own stratum
    // (for boundary alpha the global supremum is approached at infinity and
    // equals the face value).
    let (s0, center) = match boundary {
        None => {
            let x = DVector::from_iterator(m, alpha.iter().map(|&a| a as f64 / n));
            let u = pot.u0_local(0, &x).map_err(fail)?;
            (n * u.value, u.rho_star)
        }
        Some((chart, y)) => {
            let d = pot.charts()[chart].dim;
            let yx = DVector::from_iterator(d, y.iter().map(|&c| c as f64 / n));
            let s0 = n * pot.u0_local(chart, &yx).map_err(fail)?.value;
            // Proxy saddle: pull alpha/n slightly toward the vertex barycenter
            // and center the box on the interior solve there. The true peak
            // sits within O(log n) of it and inside the flanks.
            let verts = pot.polytope().vertices_f();
            let inner: Vec<f64> = (0..m)
                .map(|j| verts.iter().map(|v| v[j]).sum::<f64>() / verts.len() as f64)
                .collect();
            let eps = 1.0 / (8.0 * n);
            let nudged = DVector::from_iterator(
                m,
                (0..m).map(|j| (1.0 - eps) * alpha[j] as f64 / n + eps * inner[j]),
            );
            (s0, pot.u0_local(0, &nudged).map_err(fail)?.rho_star)
        }
    };
    let hess = pot.phi_chart(0, &center).hess;
    let scaled = hess.map(|h| h * n);
    let cov = scaled
        .clone()
        .try_inverse()
        .unwrap_or_else(|| DMatrix::identity(m, m));
    let (near, far) = match boundary {
        None => (INTERIOR_FLANK, INTERIOR_FLANK),
        Some(_) => (BOUNDARY_FLANK_NEAR, BOUNDARY_FLANK_FAR),
    };
    let axes: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            let sigma = cov[(j, j)].abs().sqrt().max(1e-8);
            let c = center[j];
            let half = CORE_SIGMAS * sigma;
            let mut breaks = Vec::new();
            if far > near {
                breaks.push(c - half - far);
            }
            breaks.push(c - half - near);
            breaks.extend(quadrature::linspace_breaks(c - half, c + half, CORE_PANELS));
            breaks.push(c + half + near);
            if far > near {
                breaks.push(c + half + far);
            }
            breaks
        })
        .collect();
    let alpha_f: Vec<f64> = alpha.iter().map(|&a| a as f64).collect();
    let integrand = move |rho: &[f64]| {
        let p = DVector::from_column_slice(rho);
        let (value, det) = pot.phi_value_det(0, &p);
        let expo: f64 =
            alpha_f.iter().zip(rho).map(|(a, r)| a * r).sum::<f64>() - n * value - s0;
        expo.exp() * det
    };
    let out = quadrature::integrate(&integrand, &axes, settings.rel_tol);
    let rel_err = out.err_est / out.value.abs().max(1e-300);
    if out.depth_exhausted {
        return Err(BergmanError::QuadratureFailure { alpha: alpha.to_vec(), rel_err });
    }
    Ok(AlphaQ { log_q: s0 + out.value.ln(), rel_err, evals: out.evals })
}

/// Per-alpha state-density terms at a point, over the closed face lattice of
/// the point's stratum. log_p[i] = <y_i, rho> - level*phi_S(rho) - log Q(a_i)
/// in chart coordinates; log_pi is their log-sum.
#[derive(Clone, Debug)]
pub struct StateDensity {
    pub chart: usize,
    pub atoms_ambient: Vec<Vec<i64>>,
    pub atoms_local: Vec<Vec<i64>>,
    pub log_p: Vec<f64>,
    pub log_pi: f64,
}

pub fn density_of_states(pot: &ToricPotential, table: &QTable, z: &OrbitPoint) -> StateDensity {
    let chart = pot.chart_index(&z.stratum);
    let (ambient, local) = pot.level_lattice(chart, table.level());
    let phi_s = pot.phi_chart(chart, &z.rho).value;
    let n = table.level() as f64;
    let log_p: Vec<f64> = ambient
        .iter()
        .zip(&local)
        .map(|(a, y)| dot_iv(y, &z.rho) - n * phi_s - table.log_q_of(a))
        .collect();
    let log_pi = log_sum_exp(&log_p);
    StateDensity { chart, atoms_ambient: ambient, atoms_local: local, log_p, log_pi }
}

pub(crate) fn dot_iv(y: &[i64], rho: &DVector<f64>) -> f64 {
    y.iter().zip(rho.iter()).map(|(&c, r)| c as f64 * r).sum()
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Atoms are exact rationals alpha/level; log-weights are kept normalized so
/// the exponentials sum to 1.
#[derive(Clone, Debug)]
pub struct DiscreteMeasure {
    pub atoms: Vec<Vec<Rat>>,
    pub atoms_f: Vec<Vec<f64>>,
    pub log_weights: Vec<f64>,
    pub normalized: bool,
}

impl DiscreteMeasure {
    pub fn total_mass(&self) -> f64 {
        self.log_weights.iter().map(|l| l.exp()).sum()
    }

    pub fn barycenter(&self) -> Vec<f64> {
        let m = self.atoms_f.first().map_or(0, Vec::len);
        let mut b = vec![0.0; m];
        for (x, l) in self.atoms_f.iter().zip(&self.log_weights) {
            let w = l.exp();
            for j in 0..m {
                b[j] += w * x[j];
            }
        }
        b
    }

    pub fn expect(&self, g: impl Fn(&[f64]) -> f64) -> f64 {
        self.atoms_f
            .iter()
            .zip(&self.log_weights)
            .map(|(x, l)| l.exp() * g(x))
            .sum()
    }
}

fn measure_from_logs(table: &QTable, dens: &StateDensity, log_w: Vec<f64>) -> DiscreteMeasure {
    let n = exact::rat_int(table.level() as i64);
    let atoms: Vec<Vec<Rat>> = dens
        .atoms_ambient
        .iter()
        .map(|a| a.iter().map(|&c| exact::rat_int(c) / n.clone()).collect())
        .collect();
    let atoms_f: Vec<Vec<f64>> = atoms
        .iter()
        .map(|a| a.iter().map(exact::to_f64).collect())
        .collect();
    DiscreteMeasure { atoms, atoms_f, log_weights: log_w, normalized: true }
}

pub fn mu_k(pot: &ToricPotential, table: &QTable, z: &OrbitPoint) -> DiscreteMeasure {
    let dens = density_of_states(pot, table, z);
    let log_w = dens.log_p.iter().map(|l| l - dens.log_pi).collect();
    measure_from_logs(table, &dens, log_w)
}

/// Time tilt: adds -t * level * f(alpha/level) to each log-weight before
/// renormalizing; the scaled values are computed in exact arithmetic.
pub fn mu_k_tilted(
    pot: &ToricPotential,
    table: &QTable,
    z: &OrbitPoint,
    f: &PlConvex,
    t: f64,
) -> DiscreteMeasure {
    let dens = density_of_states(pot, table, z);
    let nf = scaled_f(&dens, f, table.level());
    let mut log_w: Vec<f64> = dens
        .log_p
        .iter()
        .zip(&nf)
        .map(|(l, v)| l - t * v)
        .collect();
    let z0 = log_sum_exp(&log_w);
    for l in &mut log_w {
        *l -= z0;
    }
    measure_from_logs(table, &dens, log_w)
}

/// level * f(alpha/level) for each density atom, exact in the rationals.
pub fn scaled_f(dens: &StateDensity, f: &PlConvex, level: u32) -> Vec<f64> {
    let n = exact::rat_int(level as i64);
    dens.atoms_ambient
        .iter()
        .map(|a| {
            let x: Vec<Rat> = a.iter().map(|&c| exact::rat_int(c) / n.clone()).collect();
            exact::to_f64(&(f.eval_rat(&x) * n.clone()))
        })
        .collect()
}

/// Finite-level geodesic potential
///   psi_k(t, z) = (1/level) log sum_alpha exp(-t*level*f(alpha/level)) P/Pi.
/// At t=0 this is exactly 0; at a vertex it is exactly -t f(vertex).
pub fn psi_k(pot: &ToricPotential, table: &QTable, f: &PlConvex, t: f64, z: &OrbitPoint) -> f64 {
    let dens = density_of_states(pot, table, z);
    let nf = scaled_f(&dens, f, table.level());
    psi_k_from_density(table, &dens, &nf, t)
}

/// Same value from a prebuilt density and tilt vector; lets grid sweeps reuse
/// the per-point density across many times.
pub fn psi_k_from_density(table: &QTable, dens: &StateDensity, nf: &[f64], t: f64) -> f64 {
    let tilted: Vec<f64> = dens.log_p.iter().zip(nf).map(|(l, v)| l - t * v).collect();
    (log_sum_exp(&tilted) - dens.log_pi) / table.level() as f64
}

#[derive(Clone, Debug)]
pub struct PsiKDerivative {
    /// Gradient in the stratum's chart coordinates.
    pub grad_rho: DVector<f64>,
    pub dt: f64,
}

/// Exact first derivatives: the rho-gradient is the difference between the
/// tilted and untilted barycenters in chart coordinates (differentiating the
/// log-sums directly; the level*grad phi terms cancel), and the t-derivative
/// is minus the tilted mean of f.
pub fn d_psi_k(
    pot: &ToricPotential,
    table: &QTable,
    f: &PlConvex,
    t: f64,
    z: &OrbitPoint,
) -> PsiKDerivative {
    let dens = density_of_states(pot, table, z);
    let nf = scaled_f(&dens, f, table.level());
    let n = table.level() as f64;
    let d = pot.charts()[dens.chart].dim;
    let tilted: Vec<f64> = dens.log_p.iter().zip(&nf).map(|(l, v)| l - t * v).collect();
    let zt = log_sum_exp(&tilted);
    let mut grad = DVector::zeros(d);
    let mut dt = 0.0;
    for ((y, lt), (lu, v)) in dens
        .atoms_local
        .iter()
        .zip(&tilted)
        .zip(dens.log_p.iter().zip(&nf))
    {
        let wt = (lt - zt).exp();
        let wu = (lu - dens.log_pi).exp();
        for j in 0..d {
            grad[j] += (wt - wu) * y[j] as f64 / n;
        }
        dt -= wt * v / n;
    }
    PsiKDerivative { grad_rho: grad, dt }
}

/// Bernstein evaluation at x: weights are taken at rho = grad u0(x) on the
/// stratum of x, so B(g)(x) = sum g(alpha/level) P/Pi.
pub fn bernstein(
    pot: &ToricPotential,
    table: &QTable,
    g: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
) -> Result<f64, SolveError> {
    let sol = pot.u0_closed(x, tol::BOUNDARY_TOL)?;
    let z = OrbitPoint { stratum: sol.stratum, rho: sol.rho_star };
    let mu = mu_k(pot, table, &z);
    Ok(mu.expect(g))
}

/// Brute-force reference: direct summation of the defining exponentials with
/// compensated addition and no log-space stabilization. Only meaningful at
/// small levels; used to cross-check the stabilized path.
pub fn psi_k_naive(
    pot: &ToricPotential,
    table: &QTable,
    f: &PlConvex,
    t: f64,
    z: &OrbitPoint,
) -> f64 {
    let dens = density_of_states(pot, table, z);
    let nf = scaled_f(&dens, f, table.level());
    let mut num = Kahan::default();
    let mut den = Kahan::default();
    for (l, v) in dens.log_p.iter().zip(&nf) {
        num.add((l - t * v).exp());
        den.add(l.exp());
    }
    (num.sum / den.sum).ln() / table.level() as f64
}

/// Brute-force reference weights of mu_k in lattice order.
pub fn mu_k_weights_naive(pot: &ToricPotential, table: &QTable, z: &OrbitPoint) -> Vec<f64> {
    let dens = density_of_states(pot, table, z);
    let mut den = Kahan::default();
    for l in &dens.log_p {
        den.add(l.exp());
    }
    dens.log_p.iter().map(|l| l.exp() / den.sum).collect()
}

#[derive(Default)]
pub(crate) struct Kahan {
    pub(crate) sum: f64,
    carry: f64,
}

impl Kahan {
    pub(crate) fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::{cp1, cp1xcp1, cp2};

    fn pot(p: crate::DelzantPolytope) -> ToricPotential {
        ToricPotential::new(&p)
    }

    fn table(pot: &ToricPotential, level: u32) -> QTable {
        QTable::build(pot, level, &QuadSettings::default()).unwrap()
    }

    /// f(x) = max(1/2 - x, x - 1/2) on [0, 1], denominator 2.
    fn tent(p: &crate::DelzantPolytope) -> PlConvex {
        PlConvex::new(
            p,
            vec![
                (vec![exact::rat(-1, 1)], exact::rat(1, 2)),
                (vec![exact::rat(1, 1)], exact::rat(-1, 2)),
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn beta_integral_values_on_cp1() {
        // Substituting x = sigma(rho) turns the defining integral into
        // B(alpha+1, level-alpha+1), so Q is exactly alpha!(n-alpha)!/(n+1)!.
        let tp = pot(cp1());
        let t2 = table(&tp, 2);
        let want = [1.0 / 3.0, 1.0 / 6.0, 1.0 / 3.0];
        for (a, w) in want.iter().enumerate() {
            let got = t2.log_q_of(&[a as i64]).exp();
            assert!((got - w).abs() / w < 1e-11, "Q({a}) = {got}, want {w}");
        }
        let t8 = table(&tp, 8);
        let fact = |k: i64| (1..=k).product::<i64>() as f64;
        for a in 0..=8i64 {
            let want = fact(a) * fact(8 - a) / fact(9);
            let got = t8.log_q_of(&[a]).exp();
            assert!((got - want).abs() / want < 1e-11, "Q({a}) = {got}, want {want}");
        }
    }

    #[test]
    fn q_symmetry_and_log_convexity() {
        let tp = pot(cp1());
        let t = table(&tp, 16);
        for a in 0..=16i64 {
            let q1 = t.log_q_of(&[a]);
            let q2 = t.log_q_of(&[16 - a]);
            assert!((q1 - q2).abs() < 1e-12, "symmetry at {a}: {q1} vs {q2}");
        }
        for a in 1..16i64 {
            let mid = 2.0 * t.log_q_of(&[a]);
            let ends = t.log_q_of(&[a - 1]) + t.log_q_of(&[a + 1]);
            assert!(ends >= mid - 1e-9, "log-convexity at {a}");
        }
        let tp2 = pot(cp2());
        let t2 = table(&tp2, 6);
        for dir in [[1i64, 0], [0, 1], [1, -1]] {
            for a in t2.alphas() {
                let lo = [a[0] - dir[0], a[1] - dir[1]];
                let hi = [a[0] + dir[0], a[1] + dir[1]];
                if let (Some(i), Some(j)) = (t2.index_of(&lo), t2.index_of(&hi)) {
                    let ends = t2.log_q()[i] + t2.log_q()[j];
                    assert!(ends >= 2.0 * t2.log_q_of(a) - 1e-9);
                }
            }
        }
    }

    #[test]
    fn q_growth_tracks_u0() {
        let tp = pot(cp1());
        let u_half = tp.u0(&Stratum::Interior, &[0.5]).unwrap().value;
        let mut gaps = Vec::new();
        for k in [8u32, 16, 32, 64] {
            let t = table(&tp, k);
            let s = t.log_q_of(&[k as i64 / 2]) / k as f64 - u_half;
            gaps.push(s.abs());
        }
        for w in gaps.windows(2) {
            assert!(w[1] < w[0], "gap sequence {gaps:?} not decreasing");
        }
    }

    #[test]
    fn state_density_golden_and_vertex_atom() {
        let tp = pot(cp1());
        let t = table(&tp, 2);
        let dens = density_of_states(&tp, &t, &OrbitPoint::interior(vec![0.0]));
        assert!((dens.log_pi.exp() - 3.0).abs() < 1e-11);
        let p: Vec<f64> = dens.log_p.iter().map(|l| l.exp()).collect();
        for (got, want) in p.iter().zip([0.75, 1.5, 0.75]) {
            assert!((got - want).abs() < 1e-11);
        }

        let tpq = pot(cp1xcp1());
        let tq = table(&tpq, 4);
        let vdens = density_of_states(&tpq, &tq, &OrbitPoint::vertex(0));
        assert_eq!(vdens.log_p.len(), 1);
        let mu = mu_k(&tpq, &tq, &OrbitPoint::vertex(0));
        assert_eq!(mu.log_weights, vec![0.0]);
        let v = tpq.polytope().vertices_f()[0].clone();
        assert_eq!(mu.atoms_f[0], v);
    }

    #[test]
    fn fubini_study_weights_are_binomial() {
        let tp = pot(cp1());
        let k = 8u32;
        let t = table(&tp, k);
        for rho in [-2.0f64, 0.0, 2.0] {
            let mu = mu_k(&tp, &t, &OrbitPoint::interior(vec![rho]));
            let x = 1.0 / (1.0 + (-rho).exp());
            let mut binom = 1.0f64;
            for (a, l) in mu.log_weights.iter().enumerate() {
                let want = binom * x.powi(a as i32) * (1.0 - x).powi((k as usize - a) as i32);
                assert!((l.exp() - want).abs() < 1e-9, "rho {rho} atom {a}");
                binom *= (k as usize - a) as f64 / (a + 1) as f64;
            }
            assert!((mu.total_mass() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn barycenter_is_centered_at_symmetry_point() {
        let tp = pot(cp1());
        let t = table(&tp, 16);
        let mu = mu_k(&tp, &t, &OrbitPoint::interior(vec![0.0]));
        assert!((mu.barycenter()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_tilt_is_identical_to_untilted() {
        let p = cp1();
        let f = tent(&p);
        let tp = pot(p);
        let t = table(&tp, 8);
        let z = OrbitPoint::interior(vec![0.7]);
        let mu = mu_k(&tp, &t, &z);
        let mut0 = mu_k_tilted(&tp, &t, &z, &f, 0.0);
        assert_eq!(mu.log_weights, mut0.log_weights);
    }

    #[test]
    fn bernstein_reproduces_constants_linears_and_the_variance_term() {
        let tp = pot(cp1());
        let t8 = table(&tp, 8);
        let t16 = table(&tp, 16);
        let one = bernstein(&tp, &t16, &|_| 1.0, &[0.3]).unwrap();
        assert!((one - 1.0).abs() < 1e-14);
        let lin = bernstein(&tp, &t16, &|x| x[0], &[0.3]).unwrap();
        assert!((lin - 0.3).abs() < 1e-10);
        let sq = bernstein(&tp, &t8, &|x| x[0] * x[0], &[0.5]).unwrap();
        assert!((sq - (0.25 + 1.0 / 32.0)).abs() < 1e-10);
    }

    #[test]
    fn psi_k_exact_special_values() {
        let p = cp1();
        let f = tent(&p);
        let tp = pot(p);
        let t = table(&tp, 16);
        let z = OrbitPoint::interior(vec![1.3]);
        assert_eq!(psi_k(&tp, &t, &f, 0.0, &z), 0.0);

        // Vertex stratum: a single atom of weight one, so the tilt is exact.
        let v = OrbitPoint::vertex(1);
        let fv = 0.5;
        for t_val in [0.5, 1.0, 2.0] {
            let got = psi_k(&tp, &t, &f, t_val, &v);
            assert!((got + t_val * fv).abs() < 1e-15);
        }
    }

    #[test]
    fn psi_k_matches_naive_summation() {
        let p = cp1();
        let f = tent(&p);
        let tp = pot(p);
        let t = table(&tp, 8);
        for rho in [-1.0, 0.4, 2.0] {
            let z = OrbitPoint::interior(vec![rho]);
            let a = psi_k(&tp, &t, &f, 1.0, &z);
            let b = psi_k_naive(&tp, &t, &f, 1.0, &z);
            assert!((a - b).abs() < 1e-13, "rho {rho}: {a} vs {b}");
            let mu = mu_k(&tp, &t, &z);
            let w = mu_k_weights_naive(&tp, &t, &z);
            for (l, wn) in mu.log_weights.iter().zip(w) {
                assert!((l.exp() - wn).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn d_psi_k_matches_finite_differences() {
        let p = cp1();
        let f = tent(&p);
        let tp = pot(p);
        let t = table(&tp, 32);
        let rho = 0.7;
        let tt = 1.0;
        let d = d_psi_k(&tp, &t, &f, tt, &OrbitPoint::interior(vec![rho]));
        let h = 3e-5;
        let pr = |r: f64, s: f64| psi_k(&tp, &t, &f, s, &OrbitPoint::interior(vec![r]));
        let fd_rho = (pr(rho + h, tt) - pr(rho - h, tt)) / (2.0 * h);
        let fd_t = (pr(rho, tt + h) - pr(rho, tt - h)) / (2.0 * h);
        assert!((d.grad_rho[0] - fd_rho).abs() < 1e-7, "{} vs {fd_rho}", d.grad_rho[0]);
        assert!((d.dt - fd_t).abs() < 1e-7, "{} vs {fd_t}", d.dt);

        // Symmetry pins the gradient at the center.
        let d0 = d_psi_k(&tp, &t, &f, 0.0, &OrbitPoint::interior(vec![0.0]));
        assert!(d0.grad_rho[0].abs() < 1e-13);
    }

    #[test]
    fn common_q_rescaling_leaves_measures_unchanged() {
        let p = cp1();
        let f = tent(&p);
        let tp = pot(p);
        let t = table(&tp, 8);
        let mut shifted = t.clone();
        for l in &mut shifted.log_q {
            *l += 3.7;
        }
        let z = OrbitPoint::interior(vec![0.9]);
        let a = psi_k(&tp, &t, &f, 1.5, &z);
        let b = psi_k(&tp, &shifted, &f, 1.5, &z);
        assert!((a - b).abs() < 1e-14);
        let ma = mu_k(&tp, &t, &z);
        let mb = mu_k(&tp, &shifted, &z);
        for (x, y) in ma.log_weights.iter().zip(&mb.log_weights) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn state_density_growth_is_linear_on_cp1() {
        let tp = pot(cp1());
        let z = OrbitPoint::interior(vec![0.3]);
        let p32 = density_of_states(&tp, &table(&tp, 32), &z).log_pi.exp() / 32.0;
        let p64 = density_of_states(&tp, &table(&tp, 64), &z).log_pi.exp() / 64.0;
        assert!((p32 / p64 - 1.0).abs() < 0.1, "{p32} vs {p64}");
    }

    #[test]
    fn psi_k_is_nonincreasing_in_t_for_nonnegative_f() {
        let p = cp1();
        let f = tent(&p);
        let tp = pot(p);
        let t = table(&tp, 16);
        let z = OrbitPoint::interior(vec![0.8]);
        let vals: Vec<f64> = [0.0, 0.5, 1.0, 2.0]
            .iter()
            .map(|&s| psi_k(&tp, &t, &f, s, &z))
            .collect();
        for w in vals.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
        // The underlying level potential (1/n) log sum exp(<y,rho> - tnf - logQ)
        // is a log-sum of exponentials with linear exponents, hence convex in
        // rho; psi_k differs from it by phi-independent normalization terms.
        let full = |r: f64| {
            let zz = OrbitPoint::interior(vec![r]);
            let dens = density_of_states(&tp, &t, &zz);
            let phi = tp.phi_chart(0, &zz.rho).value;
            psi_k(&tp, &t, &f, 1.0, &zz) + phi + dens.log_pi / 16.0
        };
        for r in [-2.0, -0.5, 0.0, 1.0] {
            let mid = full(r + 0.25);
            assert!(full(r) + full(r + 0.5) >= 2.0 * mid - 1e-12);
        }
    }

    #[test]
    fn boundary_quadrature_meets_the_beta_oracle_at_larger_levels() {
        let tp = pot(cp1());
        let t = table(&tp, 40);
        // Q(0) = 1/(n+1) exactly.
        let got = t.log_q_of(&[0]).exp();
        assert!((got - 1.0 / 41.0).abs() * 41.0 < 1e-11, "{got}");
        assert!(t.max_rel_err() < 1e-11);
        let tq = pot(cp1xcp1());
        let t2 = table(&tq, 6);
        // Product structure: Q factors into two Beta integrals.
        let fact = |k: i64| (1..=k).product::<i64>() as f64;
        let beta = |a: i64| fact(a) * fact(6 - a) / fact(7);
        for alpha in t2.alphas() {
            let want = beta(alpha[0]) * beta(alpha[1]);
            let got = t2.log_q_of(alpha).exp();
            assert!((got - want).abs() / want < 1e-11, "{alpha:?}: {got} vs {want}");
        }
    }

    #[test]
    fn record_roundtrip_and_level_cap() {
        let tp = pot(cp1());
        let t = table(&tp, 4);
        let back = QTable::from_records(
            &tp,
            4,
            t.alphas().to_vec(),
            t.log_q().to_vec(),
            t.rel_tol(),
        )
        .unwrap();
        assert_eq!(back.log_q(), t.log_q());
        assert_eq!(back.strata(), t.strata());
        assert!(matches!(
            QTable::from_records(&tp, 6, t.alphas().to_vec(), t.log_q().to_vec(), 1e-12),
            Err(BergmanError::RecordMismatch { .. })
        ));
        let settings = QuadSettings { max_level_1d: 16, ..QuadSettings::default() };
        assert!(matches!(
            QTable::build(&tp, 32, &settings),
            Err(BergmanError::LevelBudget { .. })
        ));
    }
}

