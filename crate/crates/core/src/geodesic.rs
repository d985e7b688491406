//! Geodesic rays of toric potentials from piecewise linear convex data.
//!
//! For a piecewise linear convex `f` on the polytope, the ray at time
//! `t >= 0` evaluated at an orbit point is the partial Legendre transform
//! `psi(t, rho) = sup_x (<x, rho> - u0(x) - t f(x)) - phi(rho)`, taken
//! over the closure of the stratum the point lives on. The supremum is
//! piecewise smooth in `rho`: on a chamber a single piece of `f` is
//! active and the value is a shifted copy of `phi` in closed form;
//! between chambers the maximizer sits where several pieces tie and is
//! found by Newton iteration on the tie subspace, accepted only when
//! `rho - grad u0` lands in `t` times the hull of the active slopes.

use crate::exact::{self, Rat};
use crate::geometry::{self, HRep};
use crate::newton;
use crate::plconvex::{self, PlConvex};
use crate::potentials::{OrbitPoint, PhiEval, SolveError, ToricPotential};
use crate::tol::{BOUNDARY_TOL, HULL_COORD_TOL, KKT_TOL, NEWTON_TOL};
use nalgebra::{DMatrix, DVector};
use num::ToPrimitive;

/// Below this time the ray is evaluated by its first order expansion
/// `psi = -t f(mu0)`; region membership divides by `t` and would only
/// amplify solver noise.
const LINEAR_T: f64 = 1e-9;

/// Which piece structure of the transported potential holds at a point.
#[derive(Clone, Debug, PartialEq)]
pub enum RegionTag {
    /// Vertex stratum: the value is an exact affine function of `t`.
    Fixed,
    /// A single input piece dominates at the maximizer.
    Chamber(usize),
    /// Two or more pieces tie at the maximizer: their input indices, the
    /// barycentric weights placing `rho - grad u0` inside `t` times the
    /// hull of their slopes, and the placement residual.
    Corner { active: Vec<usize>, xi: Vec<f64>, residual: f64 },
}

/// Ray value and transported moment image at one orbit point.
#[derive(Clone, Debug)]
pub struct GeodesicSolution {
    pub t: f64,
    pub psi: f64,
    /// Ambient coordinates of the transported moment map.
    pub mu: Vec<f64>,
    pub tag: RegionTag,
    /// Disagreement between the region's closed form and a direct
    /// evaluation of the supremum at the maximizer, when both exist.
    pub cross_check: Option<f64>,
}

/// One piece of `f` written in the local coordinates of a stratum chart.
struct LocalPiece {
    /// Input piece indices that restrict to this piece on the stratum.
    globals: Vec<usize>,
    nu: Vec<Rat>,
    v: Rat,
    nu_f: DVector<f64>,
    v_f: f64,
    /// Whether the piece dominates on a full-dimensional part of the face.
    chamber: bool,
}

/// A tie locus of two or more local pieces: a chart of its affine hull in
/// face coordinates and a strictly feasible starting point for Newton.
struct TieLocus {
    members: Vec<usize>,
    base_f: DVector<f64>,
    basis_f: DMatrix<f64>,
    start: DVector<f64>,
}

struct ChartPieces {
    pieces: Vec<LocalPiece>,
    ties: Vec<TieLocus>,
}

/// Solves the ray pointwise over every stratum of one polytope, reusing
/// the localized piece data and tie charts across evaluations.
pub struct GeodesicEngine<'a> {
    pot: &'a ToricPotential,
    f: &'a PlConvex,
    charts: Vec<ChartPieces>,
}

impl<'a> GeodesicEngine<'a> {
    pub fn new(pot: &'a ToricPotential, f: &'a PlConvex) -> Self {
        assert_eq!(f.dim(), pot.polytope().dim(), "piecewise data dimension mismatch");
        assert!(f.pieces().len() <= 16, "too many pieces for tie enumeration");
        let charts = pot.charts().iter().map(|c| localize_pieces(f, c)).collect();
        Self { pot, f, charts }
    }

    pub fn potential(&self) -> &ToricPotential {
        self.pot
    }

    pub fn data(&self) -> &PlConvex {
        self.f
    }

    /// Ray value, moment image, and region tag at `z`.
    pub fn solve(&self, t: f64, z: &OrbitPoint) -> Result<GeodesicSolution, SolveError> {
        assert!(t >= 0.0, "ray time must be nonnegative");
        let idx = self.pot.chart_index(&z.stratum);
        let chart = &self.pot.charts()[idx];
        if chart.dim == 0 {
            // The vertex is fixed by the flow; only the value moves.
            let fv = exact::to_f64(&self.f.eval_rat(&chart.base));
            return Ok(GeodesicSolution {
                t,
                psi: -t * fv,
                mu: chart.base_f.iter().copied().collect(),
                tag: RegionTag::Fixed,
                cross_check: None,
            });
        }
        let cp = &self.charts[idx];
        let rho = &z.rho;
        let phi0 = self.pot.phi_chart(idx, rho);
        if t <= LINEAR_T {
            return Ok(self.solve_linearized(idx, cp, t, &phi0));
        }
        // Chamber pass: piece j is the answer iff it still dominates at
        // the moment image of the shifted point, where the supremum then
        // telescopes to phi(rho - t nu_j) - t v_j.
        for (j, piece) in cp.pieces.iter().enumerate() {
            if !piece.chamber {
                continue;
            }
            let shifted = rho - &piece.nu_f * t;
            let eval = self.pot.phi_chart(idx, &shifted);
            let y = &eval.grad;
            let own = piece.nu_f.dot(y) + piece.v_f;
            let rival = cp
                .pieces
                .iter()
                .enumerate()
                .filter(|(l, _)| *l != j)
                .map(|(_, p)| p.nu_f.dot(y) + p.v_f)
                .fold(f64::NEG_INFINITY, f64::max);
            if own - rival < BOUNDARY_TOL {
                continue;
            }
            let psi = eval.value - t * piece.v_f - phi0.value;
            // A fresh conjugate solve at the maximizer checks the closed
            // form against the generic supremum.
            let cross = self.pot.u0_local(idx, y).ok().map(|u| {
                let direct = rho.dot(y) - u.value - t * own - phi0.value;
                (direct - psi).abs()
            });
            return Ok(GeodesicSolution {
                t,
                psi,
                mu: chart.to_ambient_f(y),
                tag: RegionTag::Chamber(piece.globals[0]),
                cross_check: cross,
            });
        }
        // Corner pass over tie loci, smallest active sets first.
        for tie in &cp.ties {
            if let Some(sol) = self.try_tie(idx, cp, tie, t, rho, &phi0) {
                return Ok(sol);
            }
        }
        Err(SolveError::NoRegionAccepted)
    }

    /// First order evaluation for vanishing times: the maximizer stays at
    /// the untransported moment image and `psi = -t f(mu0) + O(t^2)`.
    fn solve_linearized(
        &self,
        idx: usize,
        cp: &ChartPieces,
        t: f64,
        phi0: &PhiEval,
    ) -> GeodesicSolution {
        let chart = &self.pot.charts()[idx];
        let y0 = &phi0.grad;
        let vals: Vec<f64> = cp.pieces.iter().map(|p| p.nu_f.dot(y0) + p.v_f).collect();
        let fmax = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let active: Vec<usize> = (0..vals.len()).filter(|&j| vals[j] >= fmax - BOUNDARY_TOL).collect();
        let tag = if active.len() == 1 {
            RegionTag::Chamber(cp.pieces[active[0]].globals[0])
        } else {
            RegionTag::Corner {
                active: active.iter().map(|&j| cp.pieces[j].globals[0]).collect(),
                xi: vec![1.0 / active.len() as f64; active.len()],
                residual: 0.0,
            }
        };
        GeodesicSolution {
            t,
            psi: -t * fmax,
            mu: chart.to_ambient_f(y0),
            tag,
            cross_check: None,
        }
    }

    /// Newton solve of the supremum restricted to one tie locus, accepted
    /// only when the subdifferential condition places `rho` in the locus's
    /// transported normal cone.
    fn try_tie(
        &self,
        idx: usize,
        cp: &ChartPieces,
        tie: &TieLocus,
        t: f64,
        rho: &DVector<f64>,
        phi0: &PhiEval,
    ) -> Option<GeodesicSolution> {
        let chart = &self.pot.charts()[idx];
        let j0 = tie.members[0];
        let nu0 = &cp.pieces[j0].nu_f;
        let v0 = cp.pieces[j0].v_f;
        let scale = 1.0 + rho.amax();
        let objective = |w: &DVector<f64>| {
            let y = &tie.base_f + &tie.basis_f * w;
            let u = self.pot.u0_local(idx, &y).ok()?;
            let value = rho.dot(&y) - u.value - t * (nu0.dot(&y) + v0);
            let resid = rho - &u.rho_star - nu0 * t;
            let grad = tie.basis_f.transpose() * &resid;
            // Hess u0 is the inverse of Hess phi at the conjugate point.
            let hphi = self.pot.phi_chart(idx, &u.rho_star).hess;
            let inv = hphi.cholesky()?.inverse();
            let hess = -(tie.basis_f.transpose() * inv * &tie.basis_f);
            Some((value, grad, hess))
        };
        let sol = newton::maximize_concave(tie.start.clone(), objective, 10.0 * NEWTON_TOL * scale).ok()?;
        let y = &tie.base_f + &tie.basis_f * &sol.x;
        let u = self.pot.u0_local(idx, &y).ok()?;
        let lam0 = nu0.dot(&y) + v0;
        // No outside piece may beat the tie value at the maximizer.
        for (l, p) in cp.pieces.iter().enumerate() {
            if tie.members.contains(&l) {
                continue;
            }
            if p.nu_f.dot(&y) + p.v_f > lam0 + BOUNDARY_TOL * (1.0 + lam0.abs()) {
                return None;
            }
        }
        // Place rho - grad u0 as t times a convex combination of the
        // member slopes; the combination is solved least squares relative
        // to the first member.
        let r = rho - &u.rho_star - nu0 * t;
        let k = tie.members.len();
        let cols = DMatrix::from_fn(rho.len(), k - 1, |i, c| {
            t * (cp.pieces[tie.members[c + 1]].nu_f[i] - nu0[i])
        });
        let rest = cols.clone().svd(true, true).solve(&r, 1e-13).ok()?;
        let residual = (&r - &cols * &rest).amax();
        if residual > KKT_TOL * scale {
            return None;
        }
        let mut xi = vec![0.0; k];
        let mut sum = 0.0;
        for c in 0..k - 1 {
            xi[c + 1] = rest[c];
            sum += rest[c];
        }
        xi[0] = 1.0 - sum;
        if xi.iter().any(|&x| x < -HULL_COORD_TOL) {
            return None;
        }
        let psi = rho.dot(&y) - u.value - t * lam0 - phi0.value;
        // f evaluated as its own max supplies the independent value.
        let fmax = cp
            .pieces
            .iter()
            .map(|p| p.nu_f.dot(&y) + p.v_f)
            .fold(f64::NEG_INFINITY, f64::max);
        let direct = rho.dot(&y) - u.value - t * fmax - phi0.value;
        Some(GeodesicSolution {
            t,
            psi,
            mu: chart.to_ambient_f(&y),
            tag: RegionTag::Corner {
                active: tie.members.iter().map(|&j| cp.pieces[j].globals[0]).collect(),
                xi,
                residual,
            },
            cross_check: Some((direct - psi).abs()),
        })
    }

    /// Ray value at `z`.
    pub fn psi_t(&self, t: f64, z: &OrbitPoint) -> Result<f64, SolveError> {
        Ok(self.solve(t, z)?.psi)
    }

    /// Transported moment image at `z`, in ambient coordinates.
    pub fn mu_t(&self, t: f64, z: &OrbitPoint) -> Result<Vec<f64>, SolveError> {
        Ok(self.solve(t, z)?.mu)
    }

    /// Time derivative of the ray: the envelope value `-f(mu_t)`.
    pub fn psi_dot(&self, t: f64, z: &OrbitPoint) -> Result<f64, SolveError> {
        let sol = self.solve(t, z)?;
        Ok(-self.f.eval(&sol.mu))
    }
}

/// Restricts the pieces of `f` to one stratum chart and enumerates the
/// tie loci that can carry corner regions there.
fn localize_pieces(f: &PlConvex, chart: &crate::potentials::Chart) -> ChartPieces {
    let d = chart.dim;
    if d == 0 {
        return ChartPieces { pieces: Vec::new(), ties: Vec::new() };
    }
    let mut pieces: Vec<LocalPiece> = Vec::new();
    for (g, piece) in f.pieces().iter().enumerate() {
        let nu: Vec<Rat> = chart
            .basis
            .iter()
            .map(|col| col.iter().zip(&piece.nu).map(|(z, n)| Rat::from(z.clone()) * n).sum())
            .collect();
        let v = geometry::dot(&piece.nu, &chart.base) + &piece.v;
        if let Some(existing) = pieces.iter_mut().find(|lp| lp.nu == nu) {
            // Parallel restrictions: only the largest offset ever attains
            // the maximum on the face.
            if existing.v == v {
                existing.globals.push(g);
            } else if v > existing.v {
                existing.v_f = exact::to_f64(&v);
                existing.v = v;
                existing.globals = vec![g];
            }
            continue;
        }
        pieces.push(LocalPiece {
            globals: vec![g],
            nu_f: DVector::from_vec(exact::to_f64_vec(&nu)),
            v_f: exact::to_f64(&v),
            nu,
            v,
            chamber: false,
        });
    }
    let hrep = HRep {
        normals: chart.hrep_local.iter().map(|(n, _)| n.clone()).collect(),
        offsets: chart.hrep_local.iter().map(|(_, a)| a.clone()).collect(),
    };
    let pairs: Vec<(Vec<Rat>, Rat)> = pieces.iter().map(|p| (p.nu.clone(), p.v.clone())).collect();
    for (j, piece) in pieces.iter_mut().enumerate() {
        piece.chamber = plconvex::region_dim(&hrep, &pairs, j) == Some(d);
    }
    let mut ties = Vec::new();
    let p = pieces.len();
    let mut masks: Vec<u32> = (0u32..1 << p).filter(|m| m.count_ones() >= 2).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    for mask in masks {
        let members: Vec<usize> = (0..p).filter(|j| mask >> j & 1 == 1).collect();
        if let Some(tie) = build_tie(chart, &pieces, members) {
            ties.push(tie);
        }
    }
    ChartPieces { pieces, ties }
}

/// Chart and starting point for the locus where the given pieces tie and
/// dominate. `None` when the locus is empty, lower dimensional than its
/// affine hull, or outside the face.
fn build_tie(
    chart: &crate::potentials::Chart,
    pieces: &[LocalPiece],
    members: Vec<usize>,
) -> Option<TieLocus> {
    let d = chart.dim;
    let j0 = members[0];
    let rows: Vec<Vec<Rat>> = members[1..]
        .iter()
        .map(|&l| pieces[j0].nu.iter().zip(&pieces[l].nu).map(|(a, b)| a - b).collect())
        .collect();
    let rhs: Vec<Rat> = members[1..].iter().map(|&l| &pieces[l].v - &pieces[j0].v).collect();
    let tchart = geometry::solution_chart(&rows, &rhs, d)?;
    let q = tchart.local_dim();
    if q == d {
        return None; // pieces coincide; impossible after deduplication
    }
    // Constraints on the locus: the face itself plus domination over the
    // pieces outside the tie, all pulled back to tie coordinates.
    let mut normals = Vec::new();
    let mut offsets = Vec::new();
    let mut push = |n: &[Rat], a: &Rat| -> Option<()> {
        match tchart.pull_back(n, a) {
            Some((ln, la)) => {
                normals.push(ln);
                offsets.push(la);
                Some(())
            }
            // Constraint parallel to the locus: holds everywhere or nowhere.
            None => (geometry::dot(n, &tchart.base) >= *a).then_some(()),
        }
    };
    for (n, a) in &chart.hrep_local {
        push(n, a)?;
    }
    for (l, piece) in pieces.iter().enumerate() {
        if members.contains(&l) {
            continue;
        }
        let n: Vec<Rat> = pieces[j0].nu.iter().zip(&piece.nu).map(|(a, b)| a - b).collect();
        let a = &piece.v - &pieces[j0].v;
        push(&n, &a)?;
    }
    let base_f = DVector::from_vec(exact::to_f64_vec(&tchart.base));
    if q == 0 {
        return Some(TieLocus { members, base_f, basis_f: DMatrix::zeros(d, 0), start: DVector::zeros(0) });
    }
    let verts = geometry::enumerate_vertices(&HRep { normals, offsets });
    if verts.is_empty() {
        return None;
    }
    let points: Vec<Vec<Rat>> = verts.into_iter().map(|v| v.point).collect();
    if geometry::affine_rank(&points) < q {
        return None;
    }
    let mut start = DVector::zeros(q);
    for p in &points {
        start += DVector::from_vec(exact::to_f64_vec(p));
    }
    start /= points.len() as f64;
    let basis_f = DMatrix::from_fn(d, q, |i, j| tchart.basis[j][i].to_f64().unwrap());
    Some(TieLocus { members, base_f, basis_f, start })
}

/// Locations where one-sided second differences of the ray disagree
/// across a region transition.
#[derive(Clone, Debug)]
pub struct HessianJump {
    pub location: Vec<f64>,
    pub axis: usize,
    pub size: f64,
}

/// Grid survey of the ray's second order behavior on the interior stratum.
#[derive(Clone, Debug)]
pub struct RegularityReport {
    pub axes: Vec<Vec<f64>>,
    /// Region tag at every node, row major with the last axis fastest.
    pub tags: Vec<RegionTag>,
    pub psi: Vec<f64>,
    /// `psi + phi` at every node: the transported potential itself.
    pub total: Vec<f64>,
    pub max_psi_second_diff: f64,
    pub max_total_second_diff: f64,
    pub jumps: Vec<HessianJump>,
    /// Determinant of the finite difference Hessian of `psi + phi` per
    /// node; NaN on the border where the stencil does not fit.
    pub det_total: Vec<f64>,
    /// Largest ratio `|mu(a) - mu(b)| / |a - b|` over grid neighbors.
    pub mu_lipschitz: f64,
}

/// Evaluates the ray over the product grid `axes` on the interior stratum
/// and reports second difference quotients, Hessian jumps across region
/// transitions, determinant of the transported metric, and the Lipschitz
/// constant of the moment image.
pub fn regularity_probe(
    engine: &GeodesicEngine,
    t: f64,
    axes: &[Vec<f64>],
) -> Result<RegularityReport, SolveError> {
    let m = axes.len();
    assert_eq!(m, engine.pot.polytope().dim(), "grid dimension mismatch");
    assert!(axes.iter().all(|a| a.len() >= 2 && a.windows(2).all(|w| w[1] > w[0])));
    let dims: Vec<usize> = axes.iter().map(Vec::len).collect();
    let n: usize = dims.iter().product();
    let mut strides = vec![1usize; m];
    for a in (0..m.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * dims[a + 1];
    }
    let mut psi = Vec::with_capacity(n);
    let mut total = Vec::with_capacity(n);
    let mut tags = Vec::with_capacity(n);
    let mut mus: Vec<Vec<f64>> = Vec::with_capacity(n);
    for flat in 0..n {
        let rho: Vec<f64> = (0..m).map(|a| axes[a][flat / strides[a] % dims[a]]).collect();
        let z = OrbitPoint::interior(rho.clone());
        let sol = engine.solve(t, &z)?;
        let phi = engine.pot.phi_chart(0, &z.rho).value;
        psi.push(sol.psi);
        total.push(sol.psi + phi);
        tags.push(sol.tag);
        mus.push(sol.mu);
    }
    // Non-uniform central second difference along one axis.
    let quot = |vals: &[f64], axis: usize, flat: usize| -> f64 {
        let i = flat / strides[axis] % dims[axis];
        let (h0, h1) = (axes[axis][i] - axes[axis][i - 1], axes[axis][i + 1] - axes[axis][i]);
        let (fm, f0, fp) =
            (vals[flat - strides[axis]], vals[flat], vals[flat + strides[axis]]);
        2.0 * (fm / (h0 * (h0 + h1)) - f0 / (h0 * h1) + fp / (h1 * (h0 + h1)))
    };
    let interior_along = |axis: usize, flat: usize| -> bool {
        let i = flat / strides[axis] % dims[axis];
        i >= 1 && i + 1 < dims[axis]
    };
    let mut max_psi_d2 = 0.0f64;
    let mut max_total_d2 = 0.0f64;
    for flat in 0..n {
        for a in 0..m {
            if interior_along(a, flat) {
                max_psi_d2 = max_psi_d2.max(quot(&psi, a, flat).abs());
                max_total_d2 = max_total_d2.max(quot(&total, a, flat).abs());
            }
        }
    }
    // Jumps: where the region identity changes between axis neighbors,
    // compare second differences taken strictly on either side.
    let mut jumps = Vec::new();
    for a in 0..m {
        let s = strides[a];
        for flat in 0..n {
            let i = flat / s % dims[a];
            if i + 1 >= dims[a] || same_region(&tags[flat], &tags[flat + s]) {
                continue;
            }
            if i < 2 || i + 3 >= dims[a] {
                continue;
            }
            let left = quot(&total, a, flat - s);
            let right = quot(&total, a, flat + 2 * s);
            let mut location: Vec<f64> =
                (0..m).map(|b| axes[b][flat / strides[b] % dims[b]]).collect();
            location[a] = 0.5 * (axes[a][i] + axes[a][i + 1]);
            jumps.push(HessianJump { location, axis: a, size: (right - left).abs() });
        }
    }
    // Determinant of the finite difference Hessian of the transported
    // potential; mixed terms use the wide cross stencil.
    let mut det_total = vec![f64::NAN; n];
    'node: for flat in 0..n {
        for a in 0..m {
            if !interior_along(a, flat) {
                continue 'node;
            }
        }
        let mut h = DMatrix::zeros(m, m);
        for a in 0..m {
            h[(a, a)] = quot(&total, a, flat);
            for b in a + 1..m {
                let (sa, sb) = (strides[a], strides[b]);
                let (ia, ib) = (flat / sa % dims[a], flat / sb % dims[b]);
                let da = axes[a][ia + 1] - axes[a][ia - 1];
                let db = axes[b][ib + 1] - axes[b][ib - 1];
                let cross = (total[flat + sa + sb] - total[flat + sa - sb]
                    - total[flat - sa + sb]
                    + total[flat - sa - sb])
                    / (da * db);
                h[(a, b)] = cross;
                h[(b, a)] = cross;
            }
        }
        det_total[flat] = h.determinant();
    }
    let mut mu_lipschitz = 0.0f64;
    for flat in 0..n {
        for a in 0..m {
            let i = flat / strides[a] % dims[a];
            if i + 1 >= dims[a] {
                continue;
            }
            let step = axes[a][i + 1] - axes[a][i];
            let diff = mus[flat]
                .iter()
                .zip(&mus[flat + strides[a]])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            mu_lipschitz = mu_lipschitz.max(diff / step);
        }
    }
    Ok(RegularityReport {
        axes: axes.to_vec(),
        tags,
        psi,
        total,
        max_psi_second_diff: max_psi_d2,
        max_total_second_diff: max_total_d2,
        jumps,
        det_total,
        mu_lipschitz,
    })
}

/// Region identity for transition detection: payload weights are ignored,
/// only which pieces are active matters.
fn same_region(a: &RegionTag, b: &RegionTag) -> bool {
    match (a, b) {
        (RegionTag::Fixed, RegionTag::Fixed) => true,
        (RegionTag::Chamber(x), RegionTag::Chamber(y)) => x == y,
        (RegionTag::Corner { active: x, .. }, RegionTag::Corner { active: y, .. }) => x == y,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::rat;
    use crate::polytope::{cp1, cp1xcp1, DelzantPolytope, Stratum};

    fn close(got: f64, want: f64, eps: f64) {
        assert!((got - want).abs() <= eps, "got {got}, want {want}");
    }

    fn tent(p: &DelzantPolytope) -> PlConvex {
        // |x - 1/2| entered increasing piece first, so the decreasing
        // branch carries input index 1.
        PlConvex::new(
            p,
            vec![(vec![rat(1, 1)], rat(-1, 2)), (vec![rat(-1, 1)], rat(1, 2))],
            None,
        )
        .unwrap()
    }

    fn ramp(p: &DelzantPolytope) -> PlConvex {
        // max(0, x1 - 1/2) on the square.
        PlConvex::new(
            p,
            vec![
                (vec![rat(0, 1), rat(0, 1)], rat(0, 1)),
                (vec![rat(1, 1), rat(0, 1)], rat(-1, 2)),
            ],
            None,
        )
        .unwrap()
    }

    fn softplus(r: f64) -> f64 {
        if r > 0.0 { r + (-r).exp().ln_1p() } else { r.exp().ln_1p() }
    }

    #[test]
    fn segment_ray_matches_the_three_branch_closed_form() {
        let p = cp1();
        let pot = ToricPotential::new(&p);
        let f = tent(&p);
        let engine = GeodesicEngine::new(&pot, &f);
        for &t in &[0.5, 1.0, 2.0] {
            for i in 0..241 {
                let rho = -6.0 + i as f64 * 0.05;
                let sol = engine.solve(t, &OrbitPoint::interior(vec![rho])).unwrap();
                let (want, want_mu) = if rho <= -t {
                    (softplus(rho + t) - t / 2.0 - softplus(rho), sigmoid(rho + t))
                } else if rho >= t {
                    (softplus(rho - t) + t / 2.0 - softplus(rho), sigmoid(rho - t))
                } else {
                    (rho / 2.0 + 2.0f64.ln() - softplus(rho), 0.5)
                };
                close(sol.psi, want, 1e-9);
                close(sol.mu[0], want_mu, 1e-9);
            }
        }
    }

    fn sigmoid(r: f64) -> f64 {
        1.0 / (1.0 + (-r).exp())
    }

    #[test]
    fn segment_ray_golden_values_and_tags() {
        let p = cp1();
        let pot = ToricPotential::new(&p);
        let f = tent(&p);
        let engine = GeodesicEngine::new(&pot, &f);

        let sol = engine.solve(1.0, &OrbitPoint::interior(vec![0.0])).unwrap();
        close(sol.psi, 0.0, 1e-12);
        close(sol.mu[0], 0.5, 1e-12);
        assert!(matches!(&sol.tag, RegionTag::Corner { active, .. } if active == &vec![0, 1]));

        let sol = engine.solve(1.0, &OrbitPoint::interior(vec![-3.0])).unwrap();
        let want = -0.5 + (1.0 + (-2.0f64).exp()).ln() - (1.0 + (-3.0f64).exp()).ln();
        close(sol.psi, want, 1e-12);
        close(sol.psi, -0.421659, 1e-6);
        assert_eq!(sol.tag, RegionTag::Chamber(1));

        let sol = engine.solve(1.0, &OrbitPoint::interior(vec![3.0])).unwrap();
        assert_eq!(sol.tag, RegionTag::Chamber(0));

        let mu = engine.mu_t(1.0, &OrbitPoint::interior(vec![2.0])).unwrap();
        close(mu[0], 1.0f64.exp() / (1.0 + 1.0f64.exp()), 1e-12);

        let dot = engine.psi_dot(1.0, &OrbitPoint::interior(vec![3.0])).unwrap();
        close(dot, -(sigmoid(2.0) - 0.5), 1e-12);
        close(dot, -0.380797, 1e-6);
    }

    #[test]
    fn vertex_solution_is_affine_in_t() {
        let p = cp1();
        let pot = ToricPotential::new(&p);
        let f = tent(&p);
        let engine = GeodesicEngine::new(&pot, &f);
        for &t in &[0.0, 0.5, 2.0] {
            let sol = engine.solve(t, &OrbitPoint::vertex(1)).unwrap();
            assert_eq!(sol.tag, RegionTag::Fixed);
            assert_eq!(sol.psi, -t * 0.5);
            assert_eq!(sol.mu, vec![1.0]);
        }
    }

    #[test]
    fn zero_time_is_exact_and_small_time_is_linear() {
        let p = cp1();
        let pot = ToricPotential::new(&p);
        let f = tent(&p);
        let engine = GeodesicEngine::new(&pot, &f);
        let z = OrbitPoint::interior(vec![1.3]);
        let sol = engine.solve(0.0, &z).unwrap();
        assert_eq!(sol.psi, 0.0);
        close(sol.mu[0], sigmoid(1.3), 1e-15);
        let sol = engine.solve(1e-12, &z).unwrap();
        close(sol.psi, -1e-12 * (sigmoid(1.3) - 0.5), 1e-24);
    }

    #[test]
    fn closed_form_agrees_with_the_direct_supremum() {
        let p = cp1();
        let pot = ToricPotential::new(&p);
        let f = tent(&p);
        let engine = GeodesicEngine::new(&pot, &f);
        for &t in &[0.5, 1.0, 2.0] {
            for i in 0..61 {
                let rho = -3.0 + i as f64 * 0.1;
                let sol = engine.solve(t, &OrbitPoint::interior(vec![rho])).unwrap();
                assert!(sol.cross_check.unwrap() <= 1e-9, "rho={rho} t={t}");
            }
        }
        let sq = cp1xcp1();
        let pot = ToricPotential::new(&sq);
        let f = ramp(&sq);
        let engine = GeodesicEngine::new(&pot, &f);
        for i in 0..13 {
            for j in 0..13 {
                let rho = vec![-1.5 + i as f64 * 0.25, -1.5 + j as f64 * 0.25];
                let sol = engine.solve(0.8, &OrbitPoint::interior(rho)).unwrap();
                assert!(sol.cross_check.unwrap() <= 1e-9);
            }
        }
    }

    #[test]
    fn envelope_and_gradient_identities_hold() {
        let p = cp1();
        let pot = ToricPotential::new(&p);
        let f = tent(&p);
        let engine = GeodesicEngine::new(&pot, &f);
        let h = 1e-5;
        for &rho in &[-2.5, -0.6, 0.4, 1.7, 2.9] {
            let z = OrbitPoint::interior(vec![rho]);
            // d psi / dt = -f(mu_t).
            let up = engine.psi_t(1.0 + h, &z).unwrap();
            let dn = engine.psi_t(1.0 - h, &z).unwrap();
            let dot = engine.psi_dot(1.0, &z).unwrap();
            close((up - dn) / (2.0 * h), dot, 1e-6);
            // grad (psi + phi) = mu_t.
            let zl = OrbitPoint::interior(vec![rho - h]);
            let zr = OrbitPoint::interior(vec![rho + h]);
            let tl = engine.psi_t(1.0, &zl).unwrap() + softplus(rho - h);
            let tr = engine.psi_t(1.0, &zr).unwrap() + softplus(rho + h);
            let mu = engine.mu_t(1.0, &z).unwrap();
            close((tr - tl) / (2.0 * h), mu[0], 1e-6);
        }
    }

    #[test]
    fn moment_image_is_constant_across_each_corner_region() {
        let sq = cp1xcp1();
        let pot = ToricPotential::new(&sq);
        let f = ramp(&sq);
        let engine = GeodesicEngine::new(&pot, &f);
        let t = 0.8;
        // Corner region over the tie x1 = 1/2: rho = grad u0(x0) plus t
        // times any convex combination of the two slopes.
        let rho2 = (0.6f64 / 0.4).ln();
        let mut first: Option<Vec<f64>> = None;
        for &s in &[0.05, 0.3, 0.55, 0.95] {
            let z = OrbitPoint::interior(vec![t * s, rho2]);
            let sol = engine.solve(t, &z).unwrap();
            assert!(
                matches!(&sol.tag, RegionTag::Corner { active, .. } if active == &vec![0, 1]),
                "s={s} tag={:?}",
                sol.tag
            );
            match &first {
                None => first = Some(sol.mu.clone()),
                Some(mu) => {
                    close(sol.mu[0], mu[0], 1e-9);
                    close(sol.mu[1], mu[1], 1e-9);
                }
            }
        }
        let mu = first.unwrap();
        close(mu[0], 0.5, 1e-9);
        close(mu[1], 0.6, 1e-9);
    }

    #[test]
    fn transported_moment_map_is_monotone() {
        let sq = cp1xcp1();
        let pot = ToricPotential::new(&sq);
        let f = ramp(&sq);
        let engine = GeodesicEngine::new(&pot, &f);
        let t = 0.7;
        let pts: Vec<Vec<f64>> = (0..25)
            .map(|i| vec![-2.0 + 0.9 * (i % 5) as f64, -2.0 + 0.9 * (i / 5) as f64])
            .collect();
        for a in &pts {
            for b in &pts {
                let ma = engine.mu_t(t, &OrbitPoint::interior(a.clone())).unwrap();
                let mb = engine.mu_t(t, &OrbitPoint::interior(b.clone())).unwrap();
                let pairing: f64 =
                    (0..2).map(|i| (ma[i] - mb[i]) * (a[i] - b[i])).sum();
                assert!(pairing >= -1e-10, "a={a:?} b={b:?} pairing={pairing}");
            }
        }
    }

    #[test]
    fn face_restriction_matches_the_segment_ray() {
        // On the bottom edge of the square the ray of max(0, x1 - 1/2)
        // reduces to the segment problem for the same data.
        let sq = cp1xcp1();
        let pot = ToricPotential::new(&sq);
        let f = ramp(&sq);
        let engine = GeodesicEngine::new(&pot, &f);
        let face = sq
            .faces()
            .iter()
            .position(|fc| fc.dim == 1 && fc.active.contains(&2))
            .unwrap();
        let chart = pot.chart(&Stratum::Face(face));
        let orient = chart.basis_f[(0, 0)];
        assert_eq!(orient.abs(), 1.0);

        let seg = cp1();
        let seg_pot = ToricPotential::new(&seg);
        let seg_f = PlConvex::new(
            &seg,
            vec![(vec![rat(0, 1)], rat(0, 1)), (vec![rat(1, 1)], rat(-1, 2))],
            None,
        )
        .unwrap();
        let seg_engine = GeodesicEngine::new(&seg_pot, &seg_f);
        for &t in &[0.6, 1.3] {
            for i in 0..21 {
                let r = -2.0 + i as f64 * 0.2;
                let sol = engine.solve(t, &OrbitPoint::face(face, vec![r])).unwrap();
                let want = seg_engine
                    .solve(t, &OrbitPoint::interior(vec![orient * r]))
                    .unwrap();
                close(sol.psi, want.psi, 1e-10);
                close(sol.mu[1], 0.0, 1e-15);
                close(sol.mu[0], want.mu[0], 1e-10);
            }
        }
    }

    #[test]
    fn probe_reports_the_quarter_hessian_jumps_of_the_segment_ray() {
        let p = cp1();
        let pot = ToricPotential::new(&p);
        let f = tent(&p);
        let engine = GeodesicEngine::new(&pot, &f);
        let n = 6001;
        let axis: Vec<f64> = (0..n).map(|i| -3.0 + i as f64 * 1e-3).collect();
        let report = regularity_probe(&engine, 1.0, &[axis.clone()]).unwrap();
        assert!(report.max_total_second_diff <= 0.26);
        assert!(report.max_psi_second_diff <= 0.26);
        // Exactly one transition on each side of the corner region.
        assert_eq!(report.jumps.len(), 2);
        for jump in &report.jumps {
            assert!((jump.location[0].abs() - 1.0).abs() <= 2e-3, "at {}", jump.location[0]);
            close(jump.size, 0.25, 0.01);
        }
        // Transported metric degenerates inside the corner region only.
        for (i, det) in report.det_total.iter().enumerate() {
            if det.is_nan() {
                continue;
            }
            let rho = axis[i];
            if rho.abs() <= 0.9 {
                assert!(det.abs() <= 1e-6, "rho={rho} det={det}");
            }
            if rho.abs() >= 1.5 {
                assert!(*det >= 1e-3, "rho={rho} det={det}");
            }
        }
        assert!(report.mu_lipschitz <= 0.3);
        // At t = 0 the potential is smooth: the active piece of f still
        // changes across rho = 0, but without any Hessian discontinuity.
        let report = regularity_probe(&engine, 0.0, &[axis]).unwrap();
        assert!(report.jumps.iter().all(|j| j.size <= 1e-6));
        assert!(report.det_total.iter().all(|d| d.is_nan() || *d > 1e-3));
    }

    #[test]
    fn probe_flags_the_degenerate_band_of_the_square_ray() {
        let sq = cp1xcp1();
        let pot = ToricPotential::new(&sq);
        let f = ramp(&sq);
        let engine = GeodesicEngine::new(&pot, &f);
        let axis: Vec<f64> = (0..41).map(|i| -2.0 + i as f64 * 0.1).collect();
        let report = regularity_probe(&engine, 1.0, &[axis.clone(), axis.clone()]).unwrap();
        for flat in 0..report.det_total.len() {
            let det = report.det_total[flat];
            if det.is_nan() {
                continue;
            }
            let r1 = axis[flat / 41];
            if (0.2..=0.8).contains(&r1) {
                assert!(det.abs() <= 1e-6, "rho1={r1} det={det}");
            }
            if r1 <= -0.5 || r1 >= 1.5 {
                assert!(det >= 1e-3, "rho1={r1} det={det}");
            }
        }
    }
}
