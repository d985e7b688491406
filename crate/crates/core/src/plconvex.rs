//! Piecewise linear convex test functions on a Delzant polytope.
//!
//! `f(x) = max_j (<nu_j, x> + v_j)` with rational data. The constructor
//! prunes pieces whose domination region on the polytope is not
//! full-dimensional (dropping them never changes the max), fixes the least
//! common denominator `d` with `d*nu_j` and `d*v_j` integral, and chooses
//! the integer cap `R >= max_P f` (minimal unless an override is supplied).
//! Weight tables and the degree-one invariant are exact rational.

use crate::exact::{self, Rat};
use crate::geometry::{self, HRep};
use crate::polytope::DelzantPolytope;
use num::bigint::BigInt;
use num::{One, Signed, ToPrimitive, Zero};
use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlError {
    NoPieces,
    DimensionMismatch,
    CapTooSmall { minimum: String },
}

impl fmt::Display for PlError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NoPieces => write!(f, "no affine pieces supplied"),
            Self::DimensionMismatch => write!(f, "piece slope dimension does not match polytope"),
            Self::CapTooSmall { minimum } => {
                write!(f, "cap must be at least the maximum of f on the polytope ({minimum})")
            }
        }
    }
}

impl std::error::Error for PlError {}

#[derive(Clone, Debug)]
pub struct Piece {
    pub nu: Vec<Rat>,
    pub v: Rat,
    pub nu_f: Vec<f64>,
    pub v_f: f64,
}

impl Piece {
    fn eval_f(&self, x: &[f64]) -> f64 {
        self.nu_f.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.v_f
    }

    fn eval_rat(&self, x: &[Rat]) -> Rat {
        geometry::dot(&self.nu, x) + &self.v
    }
}

#[derive(Clone, Debug)]
pub struct PlConvex {
    dim: usize,
    pieces: Vec<Piece>,
    denominator: u32,
    cap: i64,
    input_count: usize,
}

/// Exact weights attached to the lattice points of the `k*d`-fold dilate:
/// `eta = k*d*(R - f(alpha/(k*d)))` and its centered companion `lambda`
/// with `sum lambda = 0` exactly.
#[derive(Clone, Debug)]
pub struct WeightTable {
    pub k: u32,
    pub denominator: u32,
    pub level: u32,
    pub alphas: Vec<Vec<i64>>,
    pub eta: Vec<Rat>,
    pub lambda: Vec<Rat>,
}

impl PlConvex {
    pub fn new(
        polytope: &DelzantPolytope,
        pieces: Vec<(Vec<Rat>, Rat)>,
        cap_override: Option<i64>,
    ) -> Result<Self, PlError> {
        let dim = polytope.dim();
        if pieces.is_empty() {
            return Err(PlError::NoPieces);
        }
        if pieces.iter().any(|(nu, _)| nu.len() != dim) {
            return Err(PlError::DimensionMismatch);
        }
        // Dedupe identical pieces, then keep those with a full-dimensional
        // domination region; the max over the kept pieces is unchanged.
        let mut unique: Vec<(Vec<Rat>, Rat)> = Vec::new();
        for (nu, v) in pieces {
            if !unique.iter().any(|(n2, v2)| n2 == &nu && v2 == &v) {
                unique.push((nu, v));
            }
        }
        let hrep = polytope.hrep();
        let kept: Vec<(Vec<Rat>, Rat)> = unique
            .iter()
            .enumerate()
            .filter(|(j, _)| {
                region_dim(&hrep, &unique, *j).map_or(false, |d| d == dim)
            })
            .map(|(_, p)| p.clone())
            .collect();
        debug_assert!(!kept.is_empty(), "the maximal piece always survives pruning");
        let denominator = kept
            .iter()
            .flat_map(|(nu, v)| nu.iter().chain(std::iter::once(v)))
            .fold(BigInt::one(), |acc, r| num::integer::lcm(acc, r.denom().clone()))
            .to_u32()
            .expect("denominator fits in u32");
        let fmax: Rat = polytope
            .vertices()
            .iter()
            .map(|x| {
                kept.iter()
                    .map(|(nu, v)| geometry::dot(nu, x) + v)
                    .max()
                    .unwrap()
            })
            .max()
            .unwrap();
        let minimal_cap = exact::rat_ceil(&fmax).to_i64().expect("cap fits in i64");
        let cap = match cap_override {
            Some(c) => {
                if Rat::from(BigInt::from(c)) < fmax {
                    return Err(PlError::CapTooSmall {
                        minimum: exact::rat_string(&fmax),
                    });
                }
                c
            }
            None => minimal_cap,
        };
        let input_count = unique.len();
        let pieces = kept
            .into_iter()
            .map(|(nu, v)| Piece {
                nu_f: exact::to_f64_vec(&nu),
                v_f: exact::to_f64(&v),
                nu,
                v,
            })
            .collect();
        Ok(Self {
            dim,
            pieces,
            denominator,
            cap,
            input_count,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Number of distinct pieces supplied before pruning.
    pub fn input_count(&self) -> usize {
        self.input_count
    }

    pub fn denominator(&self) -> u32 {
        self.denominator
    }

    pub fn cap(&self) -> i64 {
        self.cap
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.eval_f(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn eval_rat(&self, x: &[Rat]) -> Rat {
        self.pieces.iter().map(|p| p.eval_rat(x)).max().unwrap()
    }

    /// Pieces within `tol` of attaining the max at `x`.
    pub fn active_pieces(&self, x: &[f64], tol: f64) -> Vec<usize> {
        let value = self.eval(x);
        (0..self.pieces.len())
            .filter(|&j| self.pieces[j].eval_f(x) >= value - tol)
            .collect()
    }

    /// Vertex representation of the subdifferential at `x`: the slopes of
    /// active pieces that are extreme in the convex hull of all active
    /// slopes, in lexicographic order.
    pub fn subdifferential(&self, x: &[f64], tol: f64) -> Vec<Vec<Rat>> {
        let active = self.active_pieces(x, tol);
        let slopes: Vec<Vec<Rat>> = active.iter().map(|&j| self.pieces[j].nu.clone()).collect();
        let mut hull: Vec<Vec<Rat>> = slopes
            .iter()
            .enumerate()
            .filter(|(i, s)| {
                let others: Vec<Vec<Rat>> = slopes
                    .iter()
                    .enumerate()
                    .filter(|(j, o)| j != i && o != s)
                    .map(|(_, o)| o.clone())
                    .collect();
                !in_hull_exact(&others, s)
            })
            .map(|(_, s)| s.clone())
            .collect();
        hull.sort();
        hull.dedup();
        hull
    }

    /// Exact half-space description of the domination region of piece `j`
    /// inside the polytope.
    pub fn chamber_hrep(&self, polytope: &DelzantPolytope, j: usize) -> HRep {
        let mut h = polytope.hrep();
        for (i, p) in self.pieces.iter().enumerate() {
            if i == j {
                continue;
            }
            let normal: Vec<Rat> = self.pieces[j]
                .nu
                .iter()
                .zip(&p.nu)
                .map(|(a, b)| a - b)
                .collect();
            let offset = &p.v - &self.pieces[j].v;
            h.normals.push(normal);
            h.offsets.push(offset);
        }
        h
    }

    /// Exact chamber volumes; these sum to the polytope volume.
    pub fn chamber_volumes(&self, polytope: &DelzantPolytope) -> Vec<Rat> {
        (0..self.pieces.len())
            .map(|j| geometry::volume(&self.chamber_hrep(polytope, j)))
            .collect()
    }

    /// Exact weight table at level `k * d`.
    pub fn weights(&self, polytope: &DelzantPolytope, k: u32) -> WeightTable {
        let level = k * self.denominator;
        let level_rat = exact::rat_int(level as i64);
        let cap_rat = exact::rat_int(self.cap);
        let alphas = polytope.lattice_points(level);
        let eta: Vec<Rat> = alphas
            .iter()
            .map(|alpha| {
                // level * f(alpha/level) = max_j (<nu_j, alpha> + level*v_j)
                let scaled_f = self
                    .pieces
                    .iter()
                    .map(|p| {
                        p.nu
                            .iter()
                            .zip(alpha)
                            .map(|(n, &a)| n * Rat::from(BigInt::from(a)))
                            .sum::<Rat>()
                            + &p.v * &level_rat
                    })
                    .max()
                    .unwrap();
                &level_rat * &cap_rat - scaled_f
            })
            .collect();
        let n = exact::rat_int(alphas.len() as i64);
        let mean: Rat = eta.iter().sum::<Rat>() / n;
        let lambda: Vec<Rat> = eta.iter().map(|e| e - &mean).collect();
        WeightTable {
            k,
            denominator: self.denominator,
            level,
            alphas,
            eta,
            lambda,
        }
    }

    /// Degree-one invariant
    /// `-(1/(2 Vol P)) (int_dP f dsigma - (Vol dP / Vol P) int_P f dmu)`,
    /// computed exactly. Boundary measure is lattice-normalized facet
    /// volume; in dimension one it is the counting measure on the endpoints.
    pub fn futaki(&self, polytope: &DelzantPolytope) -> Rat {
        let vol = polytope.volume().clone();
        let interior = self.integrate_interior(polytope);
        let (boundary, boundary_vol) = self.integrate_boundary(polytope);
        let alpha = &boundary_vol / &vol;
        -(boundary - alpha * interior) / (exact::rat_int(2) * vol)
    }

    /// Exact integral of `f` over the polytope (chamber-wise affine).
    pub fn integrate_interior(&self, polytope: &DelzantPolytope) -> Rat {
        let pieces: Vec<(Vec<Rat>, Rat)> = self
            .pieces
            .iter()
            .map(|p| (p.nu.clone(), p.v.clone()))
            .collect();
        integrate_pl(&polytope.hrep(), &pieces)
    }

    /// Exact boundary integral of `f` and total boundary volume, both in the
    /// lattice-normalized facet measure.
    pub fn integrate_boundary(&self, polytope: &DelzantPolytope) -> (Rat, Rat) {
        let mut total = Rat::zero();
        let mut total_vol = Rat::zero();
        if polytope.dim() == 1 {
            for v in polytope.vertices() {
                total += self.eval_rat(v);
                total_vol += Rat::one();
            }
            return (total, total_vol);
        }
        for r in 0..polytope.facets().len() {
            let face = polytope
                .faces()
                .iter()
                .find(|f| f.active.len() == 1 && f.active.contains(&r))
                .expect("facet face");
            let chart = &face.chart;
            let mut normals = Vec::new();
            let mut offsets = Vec::new();
            for (s, facet) in polytope.facets().iter().enumerate() {
                if s == r {
                    continue;
                }
                let n_rat: Vec<Rat> = facet.normal.iter().map(|&c| exact::rat_int(c)).collect();
                if let Some((n, a)) = chart.pull_back(&n_rat, &facet.offset) {
                    normals.push(n);
                    offsets.push(a);
                }
            }
            let local_h = HRep { normals, offsets };
            let local_pieces: Vec<(Vec<Rat>, Rat)> = self
                .pieces
                .iter()
                .map(|p| {
                    let slope: Vec<Rat> = chart
                        .basis
                        .iter()
                        .map(|col| {
                            col.iter()
                                .zip(&p.nu)
                                .map(|(z, n)| Rat::from(z.clone()) * n)
                                .sum()
                        })
                        .collect();
                    let offset = geometry::dot(&chart.base, &p.nu) + &p.v;
                    (slope, offset)
                })
                .collect();
            total += integrate_pl(&local_h, &local_pieces);
            total_vol += geometry::volume(&local_h);
        }
        (total, total_vol)
    }
}

/// Affine dimension of the domination region of piece `j` in the polytope,
/// or `None` when the region is empty.
pub(crate) fn region_dim(hrep: &HRep, pieces: &[(Vec<Rat>, Rat)], j: usize) -> Option<usize> {
    let mut h = hrep.clone();
    for (i, (nu, v)) in pieces.iter().enumerate() {
        if i == j {
            continue;
        }
        let normal: Vec<Rat> = pieces[j].0.iter().zip(nu).map(|(a, b)| a - b).collect();
        if normal.iter().all(Zero::is_zero) {
            // Parallel piece: region is empty or everything by offsets.
            if &pieces[j].1 < v {
                return None;
            }
            continue;
        }
        h.normals.push(normal);
        h.offsets.push(v - &pieces[j].1);
    }
    let verts = geometry::enumerate_vertices(&h);
    if verts.is_empty() {
        return None;
    }
    let points: Vec<Vec<Rat>> = verts.into_iter().map(|v| v.point).collect();
    Some(geometry::affine_rank(&points))
}

/// Exact integral of `max_j (<slope_j, x> + offset_j)` over a bounded
/// region. Identical pieces are merged so regions do not overlap.
pub(crate) fn integrate_pl(h: &HRep, pieces: &[(Vec<Rat>, Rat)]) -> Rat {
    let mut unique: Vec<(Vec<Rat>, Rat)> = Vec::new();
    for (nu, v) in pieces {
        if !unique.iter().any(|(n2, v2)| n2 == nu && v2 == v) {
            unique.push((nu.clone(), v.clone()));
        }
    }
    // A piece strictly dominated by a parallel one never wins the max.
    let kept: Vec<(Vec<Rat>, Rat)> = unique
        .iter()
        .filter(|(nu, v)| {
            !unique
                .iter()
                .any(|(nu2, v2)| nu2 == nu && v2 > v)
        })
        .cloned()
        .collect();
    let mut total = Rat::zero();
    for (j, (nu, v)) in kept.iter().enumerate() {
        let mut region = h.clone();
        for (i, (nu2, v2)) in kept.iter().enumerate() {
            if i == j {
                continue;
            }
            let normal: Vec<Rat> = nu.iter().zip(nu2).map(|(a, b)| a - b).collect();
            if normal.iter().all(Zero::is_zero) {
                continue;
            }
            region.normals.push(normal);
            region.offsets.push(v2 - v);
        }
        total += geometry::integrate_affine(&region, nu, v);
    }
    total
}

/// Exact convex hull membership by Caratheodory enumeration: `target` lies
/// in the hull of `points` iff some subset of size at most dim+1 carries a
/// nonnegative affine combination equal to it.
fn in_hull_exact(points: &[Vec<Rat>], target: &[Rat]) -> bool {
    if points.is_empty() {
        return false;
    }
    let dim = target.len();
    let n = points.len();
    let max_size = (dim + 1).min(n);
    for size in 1..=max_size {
        let mut subset: Vec<usize> = (0..size).collect();
        loop {
            // Solve sum b_i p_i = target, sum b_i = 1 on the subset.
            let cols: Vec<Vec<Rat>> = subset
                .iter()
                .map(|&i| {
                    let mut c = points[i].clone();
                    c.push(Rat::one());
                    c
                })
                .collect();
            let mut rhs = target.to_vec();
            rhs.push(Rat::one());
            if let Some(b) = exact::solve_columns(&cols, &rhs) {
                if b.iter().all(|c| !c.is_negative()) {
                    return true;
                }
            }
            let mut i = size;
            let mut done = true;
            while i > 0 {
                i -= 1;
                if subset[i] != i + n - size {
                    subset[i] += 1;
                    for j in i + 1..size {
                        subset[j] = subset[j - 1] + 1;
                    }
                    done = false;
                    break;
                }
            }
            if done {
                break;
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{rat, rat_int};
    use crate::polytope;
    use proptest::prelude::*;

    fn tent() -> (DelzantPolytope, PlConvex) {
        let p = polytope::cp1();
        let f = PlConvex::new(
            &p,
            vec![
                (vec![rat(-1, 1)], rat(1, 2)),
                (vec![rat(1, 1)], rat(-1, 2)),
            ],
            None,
        )
        .unwrap();
        (p, f)
    }

    #[test]
    fn tent_basics() {
        let (p, f) = tent();
        assert_eq!(f.denominator(), 2);
        assert_eq!(f.cap(), 1);
        assert!((f.eval(&[0.25]) - 0.25).abs() < 1e-15);
        assert_eq!(f.eval_rat(&[rat(1, 2)]), rat_int(0));
        let vols = f.chamber_volumes(&p);
        assert_eq!(vols.iter().sum::<Rat>(), p.volume().clone());
    }

    #[test]
    fn subdifferential_vertices() {
        let (_, f) = tent();
        assert_eq!(f.subdifferential(&[0.5], 1e-9), vec![vec![rat(-1, 1)], vec![rat(1, 1)]]);
        assert_eq!(f.subdifferential(&[0.3], 1e-9), vec![vec![rat(-1, 1)]]);
        assert_eq!(f.subdifferential(&[0.9], 1e-9), vec![vec![rat(1, 1)]]);
    }

    #[test]
    fn middle_piece_on_tie_line_is_pruned() {
        // Third piece equals the average of the other two: active only on
        // the tie line, so it must be pruned.
        let p = polytope::cp1();
        let f = PlConvex::new(
            &p,
            vec![
                (vec![rat(-1, 1)], rat(1, 2)),
                (vec![rat(1, 1)], rat(-1, 2)),
                (vec![rat(0, 1)], rat(0, 1)),
            ],
            None,
        )
        .unwrap();
        assert_eq!(f.pieces().len(), 2);
        assert_eq!(f.input_count(), 3);
    }

    #[test]
    fn weight_table_tent_level_two() {
        let (p, f) = tent();
        let w = f.weights(&p, 1);
        assert_eq!(w.level, 2);
        assert_eq!(w.alphas, vec![vec![0], vec![1], vec![2]]);
        assert_eq!(w.eta, vec![rat_int(1), rat_int(2), rat_int(1)]);
        assert_eq!(w.lambda, vec![rat(-1, 3), rat(2, 3), rat(-1, 3)]);
        assert_eq!(w.lambda.iter().sum::<Rat>(), rat_int(0));
        assert!(w.eta.iter().all(|e| !e.is_negative()));
    }

    #[test]
    fn futaki_tent_and_constants() {
        let (p, f) = tent();
        // Independent exact integration: int_0^1 |x - 1/2| dx = 1/4,
        // boundary sum f(0) + f(1) = 1, alpha = 2, volume 1, so the
        // invariant is -(1/2)(1 - 2/4) = -1/4.
        assert_eq!(f.integrate_interior(&p), rat(1, 4));
        assert_eq!(f.integrate_boundary(&p), (rat_int(1), rat_int(2)));
        assert_eq!(f.futaki(&p), rat(-1, 4));
        // Constants are annihilated on every preset.
        for poly in [polytope::cp1(), polytope::cp2(), polytope::cp1xcp1(), polytope::hirzebruch1()] {
            let dim = poly.dim();
            let c = PlConvex::new(&poly, vec![(vec![rat_int(0); dim], rat(7, 3))], None).unwrap();
            assert_eq!(c.futaki(&poly), rat_int(0));
        }
    }

    #[test]
    fn futaki_square_one_sided_ramp() {
        // f = max(0, x1 - 1/2) on the unit square.
        let p = polytope::cp1xcp1();
        let f = PlConvex::new(
            &p,
            vec![
                (vec![rat_int(0), rat_int(0)], rat_int(0)),
                (vec![rat_int(1), rat_int(0)], rat(-1, 2)),
            ],
            None,
        )
        .unwrap();
        // int_P f = int_{1/2}^1 (x - 1/2) dx = 1/8.
        assert_eq!(f.integrate_interior(&p), rat(1, 8));
        // Boundary: bottom and top edges contribute 1/8 each; the right
        // edge contributes 1/2; the left edge contributes 0.
        let (b, bv) = f.integrate_boundary(&p);
        assert_eq!(b, rat(3, 4));
        assert_eq!(bv, rat_int(4));
        // Invariant: -(1/2)(3/4 - 4 * 1/8) = -1/8.
        assert_eq!(f.futaki(&p), rat(-1, 8));
    }

    #[test]
    fn cap_override_checked() {
        let p = polytope::cp1();
        let pieces = vec![(vec![rat(1, 1)], rat(1, 1))];
        let err = PlConvex::new(&p, pieces.clone(), Some(1)).unwrap_err();
        assert_eq!(err, PlError::CapTooSmall { minimum: "2".into() });
        let ok = PlConvex::new(&p, pieces, Some(5)).unwrap();
        assert_eq!(ok.cap(), 5);
    }

    proptest! {
        #[test]
        fn eval_is_midpoint_convex(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (_, f) = tent();
            let mid = f.eval(&[(a + b) / 2.0]);
            prop_assert!(mid <= (f.eval(&[a]) + f.eval(&[b])) / 2.0 + 1e-12);
        }

        #[test]
        fn subgradient_inequality(x in 0.01f64..0.99, y in 0.0f64..1.0) {
            let (_, f) = tent();
            for g in f.subdifferential(&[x], 1e-9) {
                let gf = exact::to_f64(&g[0]);
                prop_assert!(f.eval(&[y]) >= f.eval(&[x]) + gf * (y - x) - 1e-10);
            }
        }
    }
}
