//! Exact polyhedral primitives over the rationals.
//!
//! An `HRep` lists closed half-space constraints `<x, normal> >= offset`.
//! All routines assume bounded inputs of desk scale: vertex enumeration
//! walks square subsystems, triangulation recurses through facet charts.

use crate::exact::{self, Rat};
use num::bigint::BigInt;
use num::{One, Signed, Zero};
use std::collections::BTreeSet;

/// Half-space representation of a polyhedron: `<x, normals[i]> >= offsets[i]`.
#[derive(Clone, Debug)]
pub struct HRep {
    pub normals: Vec<Vec<Rat>>,
    pub offsets: Vec<Rat>,
}

impl HRep {
    pub fn dim(&self) -> usize {
        self.normals.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    /// Exact slack `<x, n_i> - a_i`.
    pub fn slack(&self, i: usize, x: &[Rat]) -> Rat {
        dot(&self.normals[i], x) - &self.offsets[i]
    }

    pub fn contains(&self, x: &[Rat]) -> bool {
        (0..self.len()).all(|i| !self.slack(i, x).is_negative())
    }
}

pub fn dot(a: &[Rat], b: &[Rat]) -> Rat {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A vertex of a bounded polyhedron together with its exact active set.
#[derive(Clone, Debug)]
pub struct VertexData {
    pub point: Vec<Rat>,
    pub active: BTreeSet<usize>,
}

/// Enumerates all vertices of the (assumed bounded) polyhedron by solving
/// every nonsingular `dim`-subset of constraints and keeping feasible
/// solutions. Quadratic in the subset count; fine for a dozen constraints.
pub fn enumerate_vertices(h: &HRep) -> Vec<VertexData> {
    let dim = h.dim();
    let n = h.len();
    if dim == 0 || n < dim {
        return Vec::new();
    }
    let mut vertices: Vec<VertexData> = Vec::new();
    let mut subset: Vec<usize> = (0..dim).collect();
    loop {
        let a: Vec<Vec<Rat>> = subset.iter().map(|&i| h.normals[i].clone()).collect();
        let b: Vec<Rat> = subset.iter().map(|&i| h.offsets[i].clone()).collect();
        if let Some(x) = exact::solve_square(&a, &b) {
            if h.contains(&x) && !vertices.iter().any(|v| v.point == x) {
                let active = (0..n).filter(|&i| h.slack(i, &x).is_zero()).collect();
                vertices.push(VertexData { point: x, active });
            }
        }
        // next combination
        let mut i = dim;
        loop {
            if i == 0 {
                return vertices;
            }
            i -= 1;
            if subset[i] != i + n - dim {
                subset[i] += 1;
                for j in i + 1..dim {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Affine rank of a point set (dimension of its affine hull).
pub fn affine_rank(points: &[Vec<Rat>]) -> usize {
    if points.len() <= 1 {
        return 0;
    }
    let base = &points[0];
    let rows: Vec<Vec<Rat>> = points[1..]
        .iter()
        .map(|p| p.iter().zip(base).map(|(a, b)| a - b).collect())
        .collect();
    exact::rank(&rows)
}

/// True when the recession cone `{u : <u, n_i> >= 0 for all i}` is trivial,
/// i.e. the normals positively span. Tested coordinate-wise: each of the
/// vectors +-e_j must be a nonnegative combination of <= dim independent
/// normals (Caratheodory for cones).
pub fn is_bounded(h: &HRep) -> bool {
    let dim = h.dim();
    (0..dim).all(|j| {
        let mut e = vec![Rat::zero(); dim];
        e[j] = Rat::one();
        let plus = in_cone(&h.normals, &e);
        e[j] = -Rat::one();
        plus && in_cone(&h.normals, &e)
    })
}

fn in_cone(gens: &[Vec<Rat>], w: &[Rat]) -> bool {
    let dim = w.len();
    let n = gens.len();
    if w.iter().all(Zero::is_zero) {
        return true;
    }
    for size in 1..=dim.min(n) {
        let mut subset: Vec<usize> = (0..size).collect();
        loop {
            let cols: Vec<Vec<Rat>> = subset.iter().map(|&i| gens[i].clone()).collect();
            if let Some(coef) = exact::solve_columns(&cols, &w.to_vec()) {
                if coef.iter().all(|c| !c.is_negative()) {
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

/// Scales a rational vector to a primitive integer vector (positive content).
pub fn primitive_integer(v: &[Rat]) -> Vec<BigInt> {
    let lcm = v
        .iter()
        .fold(BigInt::one(), |acc, r| num::integer::lcm(acc, r.denom().clone()));
    let ints: Vec<BigInt> = v.iter().map(|r| r.numer() * (&lcm / r.denom())).collect();
    let content = ints
        .iter()
        .fold(BigInt::zero(), |acc, x| num::integer::gcd(acc, x.clone()));
    if content.is_zero() {
        return ints;
    }
    ints.iter().map(|x| x / &content).collect()
}

/// A chart of an affine subspace: `x = base + basis * y` with integer basis
/// vectors. When `basis` generates the full direction lattice, Lebesgue
/// measure in `y` is exactly the lattice-normalized measure on the subspace.
#[derive(Clone, Debug)]
pub struct AffineChart {
    pub base: Vec<Rat>,
    pub basis: Vec<Vec<BigInt>>, // column vectors in Z^ambient
}

impl AffineChart {
    pub fn local_dim(&self) -> usize {
        self.basis.len()
    }

    pub fn to_ambient(&self, y: &[Rat]) -> Vec<Rat> {
        let m = self.base.len();
        let mut x = self.base.clone();
        for (col, yi) in self.basis.iter().zip(y) {
            for i in 0..m {
                let add = Rat::from(col[i].clone()) * yi;
                x[i] = &x[i] + add;
            }
        }
        x
    }

    /// Local coordinates of an ambient point that lies on the subspace.
    pub fn to_local(&self, x: &[Rat]) -> Option<Vec<Rat>> {
        let rhs: Vec<Rat> = x.iter().zip(&self.base).map(|(a, b)| a - b).collect();
        if self.basis.is_empty() {
            return rhs.iter().all(Zero::is_zero).then(Vec::new);
        }
        let cols: Vec<Vec<Rat>> = self
            .basis
            .iter()
            .map(|c| c.iter().map(|z| Rat::from(z.clone())).collect())
            .collect();
        exact::solve_columns(&cols, &rhs)
    }

    /// Pulls back a half-space `<x, n> >= a` to `<y, B^T n> >= a - <base, n>`.
    /// Returns `None` for constraints that do not cut the chart (zero normal);
    /// the caller must check those hold identically.
    pub fn pull_back(&self, normal: &[Rat], offset: &Rat) -> Option<(Vec<Rat>, Rat)> {
        let local_n: Vec<Rat> = self
            .basis
            .iter()
            .map(|col| {
                col.iter()
                    .zip(normal)
                    .map(|(z, n)| Rat::from(z.clone()) * n)
                    .sum()
            })
            .collect();
        let local_a = offset - dot(&self.base, normal);
        if local_n.iter().all(Zero::is_zero) {
            None
        } else {
            Some((local_n, local_a))
        }
    }
}

/// Chart for the affine hull of the solution set of `rows * x = rhs`,
/// with an integer basis of the direction lattice. `None` if inconsistent.
pub fn solution_chart(rows: &[Vec<Rat>], rhs: &[Rat], dim: usize) -> Option<AffineChart> {
    // Particular solution by reduction of the augmented system.
    let mut aug: Vec<Vec<Rat>> = rows
        .iter()
        .zip(rhs)
        .map(|(r, b)| {
            let mut row = r.clone();
            row.push(b.clone());
            row
        })
        .collect();
    exact::row_reduce(&mut aug);
    let mut base = vec![Rat::zero(); dim];
    for row in &aug {
        let Some(col) = (0..dim).find(|&c| !row[c].is_zero()) else {
            if !row[dim].is_zero() {
                return None; // inconsistent
            }
            continue;
        };
        // Rows are fully reduced; with free variables at zero the pivot
        // coordinate is just the right-hand side over the pivot.
        base[col] = row[dim].clone() / row[col].clone();
    }
    // Verify the particular solution (guards against the free-var shortcut).
    for (r, b) in rows.iter().zip(rhs) {
        if &dot(r, &base) != b {
            // Solve more carefully: express pivot coordinates from reduced rows.
            return solution_chart_careful(&aug, dim);
        }
    }
    let int_rows: Vec<Vec<BigInt>> = rows.iter().map(|r| primitive_integer(r)).collect();
    let basis = exact::int_kernel_basis(&int_rows, dim);
    Some(AffineChart { base, basis })
}

fn solution_chart_careful(aug: &[Vec<Rat>], dim: usize) -> Option<AffineChart> {
    // Back-substitution on fully reduced rows, free variables set to zero.
    let mut base = vec![Rat::zero(); dim];
    for row in aug.iter().rev() {
        let Some(col) = (0..dim).find(|&c| !row[c].is_zero()) else {
            if !row[dim].is_zero() {
                return None;
            }
            continue;
        };
        let mut value = row[dim].clone();
        for c in col + 1..dim {
            if !row[c].is_zero() {
                let sub = &row[c] * &base[c];
                value -= sub;
            }
        }
        base[col] = value / row[col].clone();
    }
    let rows: Vec<Vec<Rat>> = aug
        .iter()
        .filter(|r| r[..dim].iter().any(|c| !c.is_zero()))
        .map(|r| r[..dim].to_vec())
        .collect();
    let int_rows: Vec<Vec<BigInt>> = rows.iter().map(|r| primitive_integer(r)).collect();
    let basis = exact::int_kernel_basis(&int_rows, dim);
    Some(AffineChart { base, basis })
}

/// Simplices (lists of `dim + 1` ambient points) triangulating the bounded
/// polyhedron. Constraints that coincide up to positive scaling are merged
/// first so duplicated facets are not fanned twice.
pub fn triangulate(h: &HRep) -> Vec<Vec<Vec<Rat>>> {
    let h = dedupe(h);
    let verts = enumerate_vertices(&h);
    triangulate_inner(&h, &verts)
}

fn dedupe(h: &HRep) -> HRep {
    let mut normals: Vec<Vec<Rat>> = Vec::new();
    let mut offsets: Vec<Rat> = Vec::new();
    'outer: for i in 0..h.len() {
        let n = &h.normals[i];
        let a = &h.offsets[i];
        let scale = n.iter().find(|c| !c.is_zero());
        for j in 0..normals.len() {
            let m = &normals[j];
            // n and m positively proportional with matching offsets?
            if let Some(s) = scale {
                let idx = n.iter().position(|c| !c.is_zero()).unwrap();
                if !m[idx].is_zero() {
                    let factor = &m[idx] / s;
                    if factor.is_positive()
                        && n.iter().zip(m).all(|(x, y)| &(&factor * x) == y)
                        && &(&factor * a) == &offsets[j]
                    {
                        continue 'outer;
                    }
                }
            }
        }
        normals.push(n.clone());
        offsets.push(a.clone());
    }
    HRep { normals, offsets }
}

fn triangulate_inner(h: &HRep, verts: &[VertexData]) -> Vec<Vec<Vec<Rat>>> {
    let dim = h.dim();
    if verts.is_empty() {
        return Vec::new();
    }
    if dim == 0 {
        return vec![vec![Vec::new()]];
    }
    let points: Vec<Vec<Rat>> = verts.iter().map(|v| v.point.clone()).collect();
    if affine_rank(&points) < dim {
        return Vec::new(); // measure zero
    }
    if dim == 1 {
        let mut pts = points;
        pts.sort();
        let lo = pts.first().unwrap().clone();
        let hi = pts.last().unwrap().clone();
        if lo == hi {
            return Vec::new();
        }
        return vec![vec![lo, hi]];
    }
    let apex = &verts[0];
    let mut simplices = Vec::new();
    for r in 0..h.len() {
        if apex.active.contains(&r) {
            continue;
        }
        let facet_verts: Vec<&VertexData> =
            verts.iter().filter(|v| v.active.contains(&r)).collect();
        if facet_verts.len() < dim {
            continue;
        }
        let facet_points: Vec<Vec<Rat>> = facet_verts.iter().map(|v| v.point.clone()).collect();
        if affine_rank(&facet_points) != dim - 1 {
            continue; // not facet-defining here
        }
        let chart = AffineChart {
            base: facet_points[0].clone(),
            basis: exact::int_kernel_basis(&[primitive_integer(&h.normals[r])], dim),
        };
        let mut local_normals = Vec::new();
        let mut local_offsets = Vec::new();
        for s in 0..h.len() {
            if s == r {
                continue;
            }
            if let Some((n, a)) = chart.pull_back(&h.normals[s], &h.offsets[s]) {
                local_normals.push(n);
                local_offsets.push(a);
            }
        }
        let local_h = HRep {
            normals: local_normals,
            offsets: local_offsets,
        };
        let local_verts: Vec<VertexData> = facet_verts
            .iter()
            .filter_map(|v| chart.to_local(&v.point))
            .map(|y| {
                let active = (0..local_h.len())
                    .filter(|&i| local_h.slack(i, &y).is_zero())
                    .collect();
                VertexData { point: y, active }
            })
            .collect();
        for sub in triangulate_inner(&local_h, &local_verts) {
            let mut simplex: Vec<Vec<Rat>> = sub.iter().map(|y| chart.to_ambient(y)).collect();
            simplex.push(apex.point.clone());
            // Drop degenerate cones (apex inside the facet's affine hull).
            if simplex_volume(&simplex).is_zero() {
                continue;
            }
            simplices.push(simplex);
        }
    }
    simplices
}

fn simplex_volume(simplex: &[Vec<Rat>]) -> Rat {
    let dim = simplex.len() - 1;
    if dim == 0 {
        return Rat::one();
    }
    let base = &simplex[dim];
    let rows: Vec<Vec<Rat>> = simplex[..dim]
        .iter()
        .map(|p| p.iter().zip(base).map(|(a, b)| a - b).collect())
        .collect();
    let mut v = exact::det(&rows).abs();
    let mut factorial = BigInt::one();
    for i in 2..=dim {
        factorial *= BigInt::from(i);
    }
    v /= Rat::from(factorial);
    v
}

/// Exact volume (Lebesgue in the given coordinates) of a bounded polyhedron.
pub fn volume(h: &HRep) -> Rat {
    triangulate(h).iter().map(|s| simplex_volume(s)).sum()
}

/// Exact integral of the affine function `<slope, x> + offset` over the
/// polyhedron: sum over simplices of volume times the value at the centroid.
pub fn integrate_affine(h: &HRep, slope: &[Rat], offset: &Rat) -> Rat {
    let mut total = Rat::zero();
    for s in triangulate(h) {
        let vol = simplex_volume(&s);
        if vol.is_zero() {
            continue;
        }
        let k = Rat::from(BigInt::from(s.len()));
        let mut centroid = vec![Rat::zero(); h.dim()];
        for p in &s {
            for (c, x) in centroid.iter_mut().zip(p) {
                *c = &*c + x;
            }
        }
        for c in centroid.iter_mut() {
            *c = &*c / &k;
        }
        total += vol * (dot(slope, &centroid) + offset);
    }
    total
}
