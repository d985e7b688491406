//! Delzant polytopes with exact rational data.
//!
//! A polytope is given by facet inequalities `<x, normal_r> >= offset_r`
//! with primitive integer normals. Validation checks boundedness, full
//! dimension, simplicity, and the unimodularity of the vertex cones, then
//! translates the bounding-box corner to the origin so the polytope sits in
//! the nonnegative orthant with `0` as a vertex. Vertices are required to be
//! lattice points; the canonical potentials downstream sum over `P cap Z^m`
//! and need the vertices in that set.

use crate::exact::{self, Rat};
use crate::geometry::{self, AffineChart, HRep};
use num::bigint::BigInt;
use num::{Signed, ToPrimitive};
use std::collections::BTreeSet;
use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PolytopeError {
    DimensionMismatch,
    ZeroNormal { facet: usize },
    NonPrimitiveNormal { facet: usize },
    Unbounded,
    NotFullDimensional,
    NotDelzant { vertex: usize },
    NonLatticeVertex { vertex: usize },
    NotNormalizable,
    RedundantFacet { facet: usize },
    OutsidePolytope,
}

impl fmt::Display for PolytopeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimensionMismatch => write!(f, "facet normals disagree on the ambient dimension"),
            Self::ZeroNormal { facet } => write!(f, "facet {facet} has a zero normal"),
            Self::NonPrimitiveNormal { facet } => {
                write!(f, "facet {facet} normal is not primitive")
            }
            Self::Unbounded => write!(f, "inequalities do not bound a polytope"),
            Self::NotFullDimensional => write!(f, "polytope is empty or not full-dimensional"),
            Self::NotDelzant { vertex } => {
                write!(f, "vertex {vertex} violates the Delzant condition")
            }
            Self::NonLatticeVertex { vertex } => {
                write!(f, "vertex {vertex} is not a lattice point")
            }
            Self::NotNormalizable => {
                write!(f, "no translation places the polytope in the nonnegative orthant with 0 in it")
            }
            Self::RedundantFacet { facet } => {
                write!(f, "facet {facet} is not active anywhere on the polytope")
            }
            Self::OutsidePolytope => write!(f, "point lies outside the polytope"),
        }
    }
}

impl std::error::Error for PolytopeError {}

/// Stratum of the moment polytope: the open interior, the relative interior
/// of a positive-dimensional proper face, or a vertex.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Stratum {
    Interior,
    Face(usize),
    Vertex(usize),
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Interior => write!(f, "interior"),
            Self::Face(i) => write!(f, "face({i})"),
            Self::Vertex(i) => write!(f, "vertex({i})"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Facet {
    pub normal: Vec<i64>,
    pub offset: Rat,
    pub normal_f: Vec<f64>,
    pub offset_f: f64,
}

/// A proper face of dimension >= 1. `active` is the exact set of facets
/// containing the face; `chart` parameterizes its affine hull with an
/// integer basis of the direction lattice, based at the lex-least vertex.
#[derive(Clone, Debug)]
pub struct Face {
    pub active: BTreeSet<usize>,
    pub dim: usize,
    pub vertex_ids: Vec<usize>,
    pub chart: AffineChart,
}

#[derive(Clone, Debug)]
pub struct DelzantPolytope {
    dim: usize,
    facets: Vec<Facet>,
    vertices: Vec<Vec<Rat>>,
    vertices_f: Vec<Vec<f64>>,
    vertex_active: Vec<BTreeSet<usize>>,
    faces: Vec<Face>,
    shift: Vec<Rat>,
    volume: Rat,
}

impl DelzantPolytope {
    /// Validates facet data `(normal, offset)` and builds the polytope.
    pub fn validate(input: Vec<(Vec<i64>, Rat)>) -> Result<Self, PolytopeError> {
        let dim = input.first().map_or(0, |(n, _)| n.len());
        if dim == 0 {
            return Err(PolytopeError::NotFullDimensional);
        }
        for (i, (normal, _)) in input.iter().enumerate() {
            if normal.len() != dim {
                return Err(PolytopeError::DimensionMismatch);
            }
            if normal.iter().all(|&c| c == 0) {
                return Err(PolytopeError::ZeroNormal { facet: i });
            }
            let content = normal.iter().fold(0i64, |acc, &c| num::integer::gcd(acc, c.abs()));
            if content != 1 {
                return Err(PolytopeError::NonPrimitiveNormal { facet: i });
            }
        }
        let hrep = HRep {
            normals: input
                .iter()
                .map(|(n, _)| n.iter().map(|&c| exact::rat_int(c)).collect())
                .collect(),
            offsets: input.iter().map(|(_, a)| a.clone()).collect(),
        };
        if !geometry::is_bounded(&hrep) {
            return Err(PolytopeError::Unbounded);
        }
        let raw_vertices = geometry::enumerate_vertices(&hrep);
        if raw_vertices.is_empty() {
            return Err(PolytopeError::NotFullDimensional);
        }
        let points: Vec<Vec<Rat>> = raw_vertices.iter().map(|v| v.point.clone()).collect();
        if geometry::affine_rank(&points) != dim {
            return Err(PolytopeError::NotFullDimensional);
        }
        // Delzant: exactly `dim` active facets per vertex, with unit determinant.
        for (vi, v) in raw_vertices.iter().enumerate() {
            if v.active.len() != dim {
                return Err(PolytopeError::NotDelzant { vertex: vi });
            }
            let rows: Vec<Vec<Rat>> = v
                .active
                .iter()
                .map(|&r| hrep.normals[r].clone())
                .collect();
            let d = exact::det(&rows).abs();
            if d != exact::rat_int(1) {
                return Err(PolytopeError::NotDelzant { vertex: vi });
            }
            if !v.point.iter().all(|c| c.denom() == &BigInt::from(1)) {
                return Err(PolytopeError::NonLatticeVertex { vertex: vi });
            }
        }
        for r in 0..input.len() {
            if !raw_vertices.iter().any(|v| v.active.contains(&r)) {
                return Err(PolytopeError::RedundantFacet { facet: r });
            }
        }
        // Normalize: translate the bounding-box corner to the origin.
        let corner: Vec<Rat> = (0..dim)
            .map(|j| {
                raw_vertices
                    .iter()
                    .map(|v| v.point[j].clone())
                    .min()
                    .unwrap()
            })
            .collect();
        if !raw_vertices.iter().any(|v| v.point == corner) {
            return Err(PolytopeError::NotNormalizable);
        }
        let shift: Vec<Rat> = corner.iter().map(|c| -c.clone()).collect();
        let facets: Vec<Facet> = input
            .iter()
            .map(|(normal, offset)| {
                let adjusted = offset.clone()
                    + normal
                        .iter()
                        .zip(&shift)
                        .map(|(&n, s)| exact::rat_int(n) * s)
                        .sum::<Rat>();
                Facet {
                    normal_f: normal.iter().map(|&c| c as f64).collect(),
                    offset_f: exact::to_f64(&adjusted),
                    normal: normal.clone(),
                    offset: adjusted,
                }
            })
            .collect();
        let mut vertices: Vec<Vec<Rat>> = raw_vertices
            .iter()
            .map(|v| v.point.iter().zip(&shift).map(|(p, s)| p + s).collect())
            .collect();
        let mut order: Vec<usize> = (0..vertices.len()).collect();
        order.sort_by(|&a, &b| vertices[a].cmp(&vertices[b]));
        vertices = order.iter().map(|&i| vertices[i].clone()).collect();
        let vertex_active: Vec<BTreeSet<usize>> = order
            .iter()
            .map(|&i| raw_vertices[i].active.clone())
            .collect();
        let vertices_f = vertices.iter().map(|v| exact::to_f64_vec(v)).collect();
        let shifted_hrep = HRep {
            normals: facets
                .iter()
                .map(|f| f.normal.iter().map(|&c| exact::rat_int(c)).collect())
                .collect(),
            offsets: facets.iter().map(|f| f.offset.clone()).collect(),
        };
        let volume = geometry::volume(&shifted_hrep);
        let faces = build_faces(dim, &vertices, &vertex_active, &facets);
        Ok(Self {
            dim,
            facets,
            vertices,
            vertices_f,
            vertex_active,
            faces,
            shift,
            volume,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn vertices(&self) -> &[Vec<Rat>] {
        &self.vertices
    }

    pub fn vertices_f(&self) -> &[Vec<f64>] {
        &self.vertices_f
    }

    pub fn vertex_active(&self, vertex: usize) -> &BTreeSet<usize> {
        &self.vertex_active[vertex]
    }

    /// Proper faces of dimension 1..dim-1, sorted by descending dimension.
    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Translation that was applied to the input to normalize it.
    pub fn shift(&self) -> &[Rat] {
        &self.shift
    }

    pub fn volume(&self) -> &Rat {
        &self.volume
    }

    pub fn hrep(&self) -> HRep {
        HRep {
            normals: self
                .facets
                .iter()
                .map(|f| f.normal.iter().map(|&c| exact::rat_int(c)).collect())
                .collect(),
            offsets: self.facets.iter().map(|f| f.offset.clone()).collect(),
        }
    }

    /// Signed float distance from `x` to the half-space of facet `r`,
    /// normalized by the Euclidean norm of the normal.
    pub fn facet_distance(&self, r: usize, x: &[f64]) -> f64 {
        let f = &self.facets[r];
        let s: f64 = f.normal_f.iter().zip(x).map(|(n, xi)| n * xi).sum::<f64>() - f.offset_f;
        s / f.normal_f.iter().map(|n| n * n).sum::<f64>().sqrt()
    }

    /// Minimum facet distance: positive inside, negative outside.
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        (0..self.facets.len())
            .map(|r| self.facet_distance(r, x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Lattice points of the `n`-fold dilate, in lexicographic order.
    pub fn lattice_points(&self, n: u32) -> Vec<Vec<i64>> {
        let n_rat = exact::rat_int(n as i64);
        let lo: Vec<i64> = (0..self.dim)
            .map(|j| {
                let m = self.vertices.iter().map(|v| &v[j]).min().unwrap();
                exact::rat_ceil(&(m * &n_rat)).to_i64().unwrap()
            })
            .collect();
        let hi: Vec<i64> = (0..self.dim)
            .map(|j| {
                let m = self.vertices.iter().map(|v| &v[j]).max().unwrap();
                exact::rat_floor(&(m * &n_rat)).to_i64().unwrap()
            })
            .collect();
        let thresholds: Vec<Rat> = self.facets.iter().map(|f| &f.offset * &n_rat).collect();
        let mut out = Vec::new();
        let mut point = vec![0i64; self.dim];
        self.scan(&lo, &hi, &thresholds, 0, &mut point, &mut out);
        out
    }

    fn scan(
        &self,
        lo: &[i64],
        hi: &[i64],
        thresholds: &[Rat],
        depth: usize,
        point: &mut Vec<i64>,
        out: &mut Vec<Vec<i64>>,
    ) {
        if depth == self.dim {
            let inside = self.facets.iter().zip(thresholds).all(|(f, t)| {
                let d: i64 = f.normal.iter().zip(point.iter()).map(|(&n, &p)| n * p).sum();
                &Rat::from(BigInt::from(d)) >= t
            });
            if inside {
                out.push(point.clone());
            }
            return;
        }
        for c in lo[depth]..=hi[depth] {
            point[depth] = c;
            self.scan(lo, hi, thresholds, depth + 1, point, out);
        }
    }

    /// Maps a float point to the stratum generated by its active facets
    /// (those within `tol` of equality). Errors when some facet inequality
    /// fails by more than `tol` or the active facets have empty intersection.
    pub fn locate(&self, x: &[f64], tol: f64) -> Result<Stratum, PolytopeError> {
        assert_eq!(x.len(), self.dim, "point dimension mismatch");
        let mut active: BTreeSet<usize> = BTreeSet::new();
        for r in 0..self.facets.len() {
            let d = self.facet_distance(r, x);
            if d < -tol {
                return Err(PolytopeError::OutsidePolytope);
            }
            if d.abs() <= tol {
                active.insert(r);
            }
        }
        if active.is_empty() {
            return Ok(Stratum::Interior);
        }
        // Closed active set of the face generated by the measured set.
        let holders: Vec<usize> = (0..self.vertices.len())
            .filter(|&v| active.is_subset(&self.vertex_active[v]))
            .collect();
        if holders.is_empty() {
            return Err(PolytopeError::OutsidePolytope);
        }
        let mut closure = self.vertex_active[holders[0]].clone();
        for &v in &holders[1..] {
            closure = closure
                .intersection(&self.vertex_active[v])
                .cloned()
                .collect();
        }
        if holders.len() == 1 && closure.len() == self.dim {
            return Ok(Stratum::Vertex(holders[0]));
        }
        match self.faces.iter().position(|f| f.active == closure) {
            Some(i) => Ok(Stratum::Face(i)),
            None => Ok(Stratum::Interior), // closure empty: measured set spans P
        }
    }

    /// Canonical facet description, stable across runs; used for cache keys.
    pub fn canonical_string(&self) -> String {
        let mut rows: Vec<String> = self
            .facets
            .iter()
            .map(|f| {
                let coords: Vec<String> = f.normal.iter().map(i64::to_string).collect();
                format!("{}:{}", coords.join(","), exact::rat_string(&f.offset))
            })
            .collect();
        rows.sort();
        rows.join(";")
    }
}

fn build_faces(
    dim: usize,
    vertices: &[Vec<Rat>],
    vertex_active: &[BTreeSet<usize>],
    facets: &[Facet],
) -> Vec<Face> {
    if dim < 2 {
        return Vec::new();
    }
    // Meet-closure of the vertex active sets gives every closed active set.
    let mut sets: Vec<BTreeSet<usize>> = vertex_active.to_vec();
    loop {
        let mut grew = false;
        let snapshot = sets.clone();
        for a in &snapshot {
            for b in &snapshot {
                let meet: BTreeSet<usize> = a.intersection(b).cloned().collect();
                if !meet.is_empty() && !sets.contains(&meet) {
                    sets.push(meet);
                    grew = true;
                }
            }
        }
        if !grew {
            break;
        }
    }
    let mut faces = Vec::new();
    for s in sets {
        let holders: Vec<usize> = (0..vertices.len())
            .filter(|&v| s.is_subset(&vertex_active[v]))
            .collect();
        let mut closure = vertex_active[holders[0]].clone();
        for &v in &holders[1..] {
            closure = closure.intersection(&vertex_active[v]).cloned().collect();
        }
        if closure != s {
            continue; // not the closed active set of a face
        }
        let points: Vec<Vec<Rat>> = holders.iter().map(|&v| vertices[v].clone()).collect();
        let fdim = geometry::affine_rank(&points);
        if fdim == 0 || fdim == dim {
            continue;
        }
        let base = points.iter().min().unwrap().clone();
        let rows: Vec<Vec<BigInt>> = s
            .iter()
            .map(|&r| facets[r].normal.iter().map(|&c| BigInt::from(c)).collect())
            .collect();
        let basis = exact::int_kernel_basis(&rows, dim);
        debug_assert_eq!(basis.len(), fdim);
        faces.push(Face {
            active: s,
            dim: fdim,
            vertex_ids: holders,
            chart: AffineChart { base, basis },
        });
    }
    faces.sort_by(|a, b| b.dim.cmp(&a.dim).then_with(|| a.active.cmp(&b.active)));
    faces
}

/// The interval [0, 1].
pub fn cp1() -> DelzantPolytope {
    DelzantPolytope::validate(vec![
        (vec![1], exact::rat_int(0)),
        (vec![-1], exact::rat_int(-1)),
    ])
    .expect("preset")
}

/// The unit simplex in R^2.
pub fn cp2() -> DelzantPolytope {
    DelzantPolytope::validate(vec![
        (vec![1, 0], exact::rat_int(0)),
        (vec![0, 1], exact::rat_int(0)),
        (vec![-1, -1], exact::rat_int(-1)),
    ])
    .expect("preset")
}

/// The unit square.
pub fn cp1xcp1() -> DelzantPolytope {
    DelzantPolytope::validate(vec![
        (vec![1, 0], exact::rat_int(0)),
        (vec![-1, 0], exact::rat_int(-1)),
        (vec![0, 1], exact::rat_int(0)),
        (vec![0, -1], exact::rat_int(-1)),
    ])
    .expect("preset")
}

/// First Hirzebruch surface: trapezoid with vertices (0,0), (2,0), (1,1), (0,1).
pub fn hirzebruch1() -> DelzantPolytope {
    DelzantPolytope::validate(vec![
        (vec![1, 0], exact::rat_int(0)),
        (vec![0, 1], exact::rat_int(0)),
        (vec![0, -1], exact::rat_int(-1)),
        (vec![-1, -1], exact::rat_int(-2)),
    ])
    .expect("preset")
}

pub fn preset(name: &str) -> Option<DelzantPolytope> {
    match name.to_ascii_lowercase().as_str() {
        "cp1" => Some(cp1()),
        "cp2" => Some(cp2()),
        "cp1xcp1" => Some(cp1xcp1()),
        "hirzebruch1" | "hirzebruch-1" => Some(hirzebruch1()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{rat, rat_int};

    #[test]
    fn presets_validate() {
        for p in [cp1(), cp2(), cp1xcp1(), hirzebruch1()] {
            assert!(p.volume() > &rat_int(0));
            // 0 is a vertex and the polytope sits in the nonnegative orthant.
            assert!(p.vertices().iter().any(|v| v.iter().all(|c| num::Zero::is_zero(c))));
            for v in p.vertices() {
                assert!(v.iter().all(|c| !c.is_negative()));
            }
        }
        assert_eq!(cp2().volume(), &rat(1, 2));
        assert_eq!(hirzebruch1().volume(), &rat(3, 2));
    }

    #[test]
    fn ehrhart_counts_match_closed_forms() {
        // Closed-form lattice counts of the dilates, derived by direct
        // counting: interval n+1; simplex (n+1)(n+2)/2; square (n+1)^2;
        // trapezoid sum_{y=0..n} (2n - y + 1) = (n+1)(3n+2)/2.
        for n in 0..=10u32 {
            let nn = n as usize;
            assert_eq!(cp1().lattice_points(n).len(), nn + 1);
            assert_eq!(cp2().lattice_points(n).len(), (nn + 1) * (nn + 2) / 2);
            assert_eq!(cp1xcp1().lattice_points(n).len(), (nn + 1) * (nn + 1));
            assert_eq!(
                hirzebruch1().lattice_points(n).len(),
                (nn + 1) * (3 * nn + 2) / 2
            );
        }
    }

    #[test]
    fn lattice_points_sorted_and_inside() {
        let p = hirzebruch1();
        let pts = p.lattice_points(3);
        let mut sorted = pts.clone();
        sorted.sort();
        assert_eq!(pts, sorted);
        for a in &pts {
            let x: Vec<f64> = a.iter().map(|&c| c as f64 / 3.0).collect();
            assert!(p.boundary_distance(&x) >= -1e-12);
        }
    }

    #[test]
    fn validation_rejects_bad_inputs() {
        // Non-primitive normal.
        let e = DelzantPolytope::validate(vec![
            (vec![2], rat_int(0)),
            (vec![-1], rat_int(-1)),
        ])
        .unwrap_err();
        assert_eq!(e, PolytopeError::NonPrimitiveNormal { facet: 0 });
        // Unbounded.
        let e = DelzantPolytope::validate(vec![(vec![1, 0], rat_int(0)), (vec![0, 1], rat_int(0))])
            .unwrap_err();
        assert_eq!(e, PolytopeError::Unbounded);
        // Non-Delzant vertex: cone at origin spanned by (1,0) and (1,2).
        let e = DelzantPolytope::validate(vec![
            (vec![0, 1], rat_int(0)),
            (vec![2, -1], rat_int(0)),
            (vec![-1, 0], rat_int(-1)),
            (vec![0, -1], rat_int(-2)),
        ])
        .unwrap_err();
        assert!(matches!(
            e,
            PolytopeError::NotDelzant { .. } | PolytopeError::NonPrimitiveNormal { .. }
        ));
        // Non-lattice vertex: [0, 1/2].
        let e = DelzantPolytope::validate(vec![
            (vec![1], rat_int(0)),
            (vec![-1], rat(-1, 2)),
        ])
        .unwrap_err();
        assert!(matches!(e, PolytopeError::NonLatticeVertex { .. }));
        // Redundant facet.
        let e = DelzantPolytope::validate(vec![
            (vec![1], rat_int(0)),
            (vec![-1], rat_int(-1)),
            (vec![1], rat_int(-5)),
        ])
        .unwrap_err();
        assert_eq!(e, PolytopeError::RedundantFacet { facet: 2 });
        // Triangle with no translation normalization: vertices (0,1),(1,0),(1,1).
        let e = DelzantPolytope::validate(vec![
            (vec![-1, 0], rat_int(-1)),
            (vec![0, -1], rat_int(-1)),
            (vec![1, 1], rat_int(1)),
        ])
        .unwrap_err();
        assert_eq!(e, PolytopeError::NotNormalizable);
    }

    #[test]
    fn normalization_translates_and_is_idempotent() {
        // [3, 4] translates to [0, 1].
        let p = DelzantPolytope::validate(vec![
            (vec![1], rat_int(3)),
            (vec![-1], rat_int(-4)),
        ])
        .unwrap();
        assert_eq!(p.vertices()[0], vec![rat_int(0)]);
        assert_eq!(p.vertices()[1], vec![rat_int(1)]);
        assert_eq!(p.shift(), &[rat_int(-3)]);
        // Re-validating the stored facets changes nothing.
        let again = DelzantPolytope::validate(
            p.facets()
                .iter()
                .map(|f| (f.normal.clone(), f.offset.clone()))
                .collect(),
        )
        .unwrap();
        assert_eq!(again.canonical_string(), p.canonical_string());
        assert!(again.shift().iter().all(|c| num::Zero::is_zero(c)));
    }

    #[test]
    fn face_lattice_of_square() {
        let p = cp1xcp1();
        assert_eq!(p.vertices().len(), 4);
        assert_eq!(p.faces().len(), 4); // four edges
        for f in p.faces() {
            assert_eq!(f.dim, 1);
            assert_eq!(f.vertex_ids.len(), 2);
            assert_eq!(f.chart.basis.len(), 1);
        }
    }

    #[test]
    fn locate_strata() {
        let p = cp1xcp1();
        assert_eq!(p.locate(&[0.5, 0.5], 1e-9).unwrap(), Stratum::Interior);
        let s = p.locate(&[0.0, 0.5], 1e-9).unwrap();
        assert!(matches!(s, Stratum::Face(_)));
        let v = p.locate(&[0.0, 0.0], 1e-9).unwrap();
        assert!(matches!(v, Stratum::Vertex(_)));
        // Within tolerance of the boundary counts as on it.
        let s2 = p.locate(&[5e-10, 0.5], 1e-9).unwrap();
        assert_eq!(s, s2);
        assert_eq!(
            p.locate(&[-0.1, 0.5], 1e-9).unwrap_err(),
            PolytopeError::OutsidePolytope
        );
    }

    #[test]
    fn locate_matches_face_of_vertex_pair() {
        let p = cp2();
        // Hypotenuse midpoint.
        let s = p.locate(&[0.5, 0.5], 1e-9).unwrap();
        let Stratum::Face(i) = s else { panic!("expected face") };
        assert!(p.faces()[i].active.contains(&2));
    }
}
