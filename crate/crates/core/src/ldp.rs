//! Large deviation diagnostics for the spectral measures.
//!
//! The measures concentrate exponentially fast in the lattice level: the
//! probability of a window away from the moment image decays like
//! `exp(-n I)` with a rate built from the symplectic potential of the
//! stratum. This module evaluates the rate, its log moment generating
//! dual, window bounds at finite level against the rate infimum, and the
//! variational identity tying tilted measures to the geodesic ray.

use crate::bergman::{self, QTable};
use crate::geodesic::GeodesicEngine;
use crate::geometry;
use crate::newton;
use crate::plconvex::PlConvex;
use crate::polytope::Stratum;
use crate::potentials::{OrbitPoint, SolveError, ToricPotential};
use crate::tol::{BOUNDARY_TOL, NEWTON_TOL};
use nalgebra::DVector;
use std::collections::BTreeSet;
use std::fmt;

/// A real number extended by both infinities, kept out of float
/// arithmetic: sums and comparisons against infinite values are decided
/// structurally, never through `f64::INFINITY`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtReal {
    MinusInf,
    Finite(f64),
    PlusInf,
}

impl ExtReal {
    pub fn finite(self) -> Option<f64> {
        match self {
            Self::Finite(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Self::Finite(_))
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MinusInf => write!(f, "-inf"),
            Self::Finite(v) => write!(f, "{v}"),
            Self::PlusInf => write!(f, "inf"),
        }
    }
}

fn stratum_active(pot: &ToricPotential, s: &Stratum) -> BTreeSet<usize> {
    match s {
        Stratum::Interior => BTreeSet::new(),
        Stratum::Face(i) => pot.polytope().faces()[*i].active.clone(),
        Stratum::Vertex(i) => pot.polytope().vertex_active(*i).clone(),
    }
}

/// Rate of the measures anchored at `z`, evaluated at an ambient point.
/// Finite exactly on the closure of the stratum of `z` intersected with
/// the polytope; infinite elsewhere. Solver failures are surfaced, never
/// folded into the infinite branch.
pub fn rate(pot: &ToricPotential, z: &OrbitPoint, x: &[f64]) -> Result<ExtReal, SolveError> {
    let Ok(sx) = pot.polytope().locate(x, BOUNDARY_TOL) else {
        return Ok(ExtReal::PlusInf);
    };
    let need = stratum_active(pot, &z.stratum);
    if !need.is_subset(&stratum_active(pot, &sx)) {
        return Ok(ExtReal::PlusInf);
    }
    let idx = pot.chart_index(&z.stratum);
    let chart = &pot.charts()[idx];
    if chart.dim == 0 {
        return Ok(ExtReal::Finite(0.0));
    }
    let u = pot.u0_closed(x, BOUNDARY_TOL)?;
    let (local, _) = chart.to_local_f(x);
    let phi = pot.phi_chart(idx, &z.rho).value;
    Ok(ExtReal::Finite(u.value - local.dot(&z.rho) + phi))
}

/// Limiting log moment generating function of the measures at `z`: a
/// difference of stratum potentials, with `t` in chart coordinates.
pub fn log_mgf_limit(pot: &ToricPotential, z: &OrbitPoint, t: &DVector<f64>) -> f64 {
    let idx = pot.chart_index(&z.stratum);
    if pot.charts()[idx].dim == 0 {
        return 0.0;
    }
    let shifted = &z.rho + t;
    pot.phi_chart(idx, &shifted).value - pot.phi_chart(idx, &z.rho).value
}

/// Finite level log moment generating function `(1/n) log E exp(<alpha, t>)`
/// under the level-`n` measure at `z`, with `t` in chart coordinates.
pub fn log_mgf_k(pot: &ToricPotential, table: &QTable, z: &OrbitPoint, t: &DVector<f64>) -> f64 {
    let dens = bergman::density_of_states(pot, table, z);
    let shifted: Vec<f64> = dens
        .atoms_local
        .iter()
        .zip(&dens.log_p)
        .map(|(y, l)| bergman::dot_iv(y, t) + l)
        .collect();
    (bergman::log_sum_exp(&shifted) - dens.log_pi) / table.level() as f64
}

/// Outcome of the Fenchel duality check at one point: the rate, the
/// conjugate supremum of the limiting log moment generating function, the
/// gap between them, and the maximizing tilt.
#[derive(Clone, Debug)]
pub struct ConjugateCheck {
    pub rate: f64,
    pub dual: f64,
    pub gap: f64,
    pub t_star: DVector<f64>,
}

/// Verifies `I(x) = sup_t (<x, t> - Lambda(t))` by solving the supremum
/// with Newton iteration from `t = 0`. The point must lie strictly inside
/// the stratum of `z`; the supremum escapes to infinity on the boundary.
pub fn conjugate_check(
    pot: &ToricPotential,
    z: &OrbitPoint,
    x: &[f64],
) -> Result<ConjugateCheck, SolveError> {
    let ExtReal::Finite(r) = rate(pot, z, x)? else {
        return Err(SolveError::OffStratum);
    };
    let idx = pot.chart_index(&z.stratum);
    let chart = &pot.charts()[idx];
    let (local, _) = chart.to_local_f(x);
    let rho = z.rho.clone();
    let phi0 = pot.phi_chart(idx, &rho).value;
    let objective = |t: &DVector<f64>| {
        let eval = pot.phi_chart(idx, &(&rho + t));
        Some((local.dot(t) - eval.value + phi0, &local - eval.grad, -eval.hess))
    };
    let scale = 1.0 + local.amax() + rho.amax();
    let sol = newton::maximize_concave(DVector::zeros(chart.dim), objective, NEWTON_TOL * scale)
        .map_err(SolveError::NoConvergence)?;
    Ok(ConjugateCheck { rate: r, dual: sol.value, gap: (sol.value - r).abs(), t_star: sol.x })
}

/// Window bound at one level: the normalized log mass of the window, the
/// rate infimum over it, and the defect between them.
#[derive(Clone, Debug)]
pub struct LdpBound {
    pub level: u32,
    pub log_mass: ExtReal,
    pub rate_inf: ExtReal,
    pub gap: ExtReal,
}

fn in_union(boxes: &[(Vec<f64>, Vec<f64>)], x: &[f64]) -> bool {
    boxes
        .iter()
        .any(|(lo, hi)| x.iter().zip(lo).all(|(v, l)| v >= l) && x.iter().zip(hi).all(|(v, h)| v <= h))
}

/// Compares the mass that each level gives to a union of closed boxes
/// with the rate infimum over the union. Windows that miss the stratum
/// closure entirely come back with infinite entries rather than an error.
pub fn ldp_bounds(
    pot: &ToricPotential,
    tables: &[QTable],
    z: &OrbitPoint,
    boxes: &[(Vec<f64>, Vec<f64>)],
) -> Result<Vec<LdpBound>, SolveError> {
    let rate_inf = rate_infimum(pot, z, boxes)?;
    let mut out = Vec::with_capacity(tables.len());
    for table in tables {
        let dens = bergman::density_of_states(pot, table, z);
        let n = table.level() as f64;
        let selected: Vec<f64> = dens
            .atoms_ambient
            .iter()
            .zip(&dens.log_p)
            .filter(|(a, _)| {
                let x: Vec<f64> = a.iter().map(|&c| c as f64 / n).collect();
                in_union(boxes, &x)
            })
            .map(|(_, l)| *l)
            .collect();
        let log_mass = if selected.is_empty() {
            ExtReal::MinusInf
        } else {
            ExtReal::Finite((bergman::log_sum_exp(&selected) - dens.log_pi) / n)
        };
        let gap = match (log_mass, rate_inf) {
            (ExtReal::Finite(m), ExtReal::Finite(r)) => ExtReal::Finite((m + r).abs()),
            _ => ExtReal::PlusInf,
        };
        out.push(LdpBound { level: table.level(), log_mass, rate_inf, gap });
    }
    Ok(out)
}

/// Infimum of the rate over the union of boxes, by refined grid search in
/// the chart coordinates of the stratum of `z`.
fn rate_infimum(
    pot: &ToricPotential,
    z: &OrbitPoint,
    boxes: &[(Vec<f64>, Vec<f64>)],
) -> Result<ExtReal, SolveError> {
    let idx = pot.chart_index(&z.stratum);
    let chart = &pot.charts()[idx];
    if chart.dim == 0 {
        let v: Vec<f64> = chart.base_f.iter().copied().collect();
        return Ok(if in_union(boxes, &v) { ExtReal::Finite(0.0) } else { ExtReal::PlusInf });
    }
    // Bounding box of the face in its own coordinates seeds the search.
    let hrep = geometry::HRep {
        normals: chart.hrep_local.iter().map(|(n, _)| n.clone()).collect(),
        offsets: chart.hrep_local.iter().map(|(_, a)| a.clone()).collect(),
    };
    let verts = geometry::enumerate_vertices(&hrep);
    let d = chart.dim;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for v in &verts {
        for (i, c) in crate::exact::to_f64_vec(&v.point).iter().enumerate() {
            lo[i] = lo[i].min(*c);
            hi[i] = hi[i].max(*c);
        }
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    let per_axis = 17usize;
    let sweep = |lo: &[f64], hi: &[f64], best: &mut Option<(f64, Vec<f64>)>| -> Result<(), SolveError> {
        let total = per_axis.pow(d as u32);
        for flat in 0..total {
            let mut y = DVector::zeros(d);
            let mut rem = flat;
            for a in 0..d {
                let i = rem % per_axis;
                rem /= per_axis;
                y[a] = lo[a] + (hi[a] - lo[a]) * i as f64 / (per_axis - 1) as f64;
            }
            let x = chart.to_ambient_f(&y);
            if !in_union(boxes, &x) {
                continue;
            }
            if let ExtReal::Finite(v) = rate(pot, z, &x)? {
                if best.as_ref().map_or(true, |(b, _)| v < *b) {
                    *best = Some((v, y.iter().copied().collect()));
                }
            }
        }
        Ok(())
    };
    sweep(&lo, &hi, &mut best)?;
    let mut span: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| h - l).collect();
    for _ in 0..8 {
        let Some((_, center)) = best.clone() else { break };
        for s in &mut span {
            *s /= 4.0;
        }
        let lo: Vec<f64> = center.iter().zip(&span).map(|(c, s)| c - s / 2.0).collect();
        let hi: Vec<f64> = center.iter().zip(&span).map(|(c, s)| c + s / 2.0).collect();
        sweep(&lo, &hi, &mut best)?;
    }
    Ok(best.map_or(ExtReal::PlusInf, |(v, _)| ExtReal::Finite(v)))
}

/// Variational identity diagnostics at one level: the defect between the
/// finite level ray and the geodesic value, the distance from the tilted
/// barycenter to the transported moment image, and the distance from the
/// minimizer of the tilted rate over the atoms to the same point.
#[derive(Clone, Debug)]
pub struct VaradhanCheck {
    pub level: u32,
    pub delta: f64,
    pub bary_dist: f64,
    pub argmin_dist: f64,
}

/// Checks `psi_k -> sup_x (-t f(x) - I(x)) = psi_t` across levels, with
/// the tilted measure diagnostics that witness where the supremum sits.
pub fn varadhan_check(
    pot: &ToricPotential,
    tables: &[QTable],
    z: &OrbitPoint,
    f: &PlConvex,
    t: f64,
) -> Result<Vec<VaradhanCheck>, SolveError> {
    let engine = GeodesicEngine::new(pot, f);
    let target = engine.solve(t, z)?;
    let dist = |x: &[f64]| -> f64 {
        x.iter().zip(&target.mu).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let mut out = Vec::with_capacity(tables.len());
    for table in tables {
        let psi_k = bergman::psi_k(pot, table, f, t, z);
        let tilted = bergman::mu_k_tilted(pot, table, z, f, t);
        let bary = tilted.barycenter();
        let mut argmin: Option<(f64, &Vec<f64>)> = None;
        for atom in &tilted.atoms_f {
            let ExtReal::Finite(r) = rate(pot, z, atom)? else {
                continue;
            };
            let v = t * f.eval(atom) + r;
            if argmin.as_ref().map_or(true, |(b, _)| v < *b) {
                argmin = Some((v, atom));
            }
        }
        let (_, xmin) = argmin.expect("measure has at least one atom");
        out.push(VaradhanCheck {
            level: table.level(),
            delta: (psi_k - target.psi).abs(),
            bary_dist: dist(&bary),
            argmin_dist: dist(xmin),
        });
    }
    Ok(out)
}
