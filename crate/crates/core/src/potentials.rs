//! Canonical lattice-sum Kahler potential, its face restrictions, the moment
//! map, and the symplectic potential u0 obtained by Legendre transform.
//!
//! Every stratum of the polytope (interior, proper faces, vertices) carries a
//! chart `x = base + B y` with an integer basis of its direction lattice and
//! a potential `phi_S(rho) = log sum_{c in lattice_S} exp(<c, rho>)` over the
//! stratum's closure lattice written in chart coordinates. The interior chart
//! is the identity. All downstream analysis (Bergman measures, geodesics,
//! rate functions) works chart-locally through this type.

use crate::exact::{self, Rat};
use crate::geometry;
use crate::newton::{self, NewtonFailure};
use crate::polytope::{DelzantPolytope, PolytopeError, Stratum};
use crate::tol::{BOUNDARY_TOL, NEWTON_TOL};
use nalgebra::{DMatrix, DVector};
use num::bigint::BigInt;
use num::rational::Ratio;
use num::{ToPrimitive, Zero};

#[derive(Clone, Debug, PartialEq)]
pub enum SolveError {
    /// The point lies on (or within tolerance of) a lower stratum; the caller
    /// must re-stratify and solve on the smaller face.
    BoundaryPoint,
    /// The point is not on the requested stratum's closed face at all.
    OffStratum,
    NoConvergence(NewtonFailure),
    /// No chamber or corner stratum accepted the candidate maximizer.
    NoRegionAccepted,
}

impl std::fmt::Display for SolveError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::BoundaryPoint => write!(f, "point is on a lower stratum; re-stratify"),
            Self::OffStratum => write!(f, "point is not on the requested stratum"),
            Self::NoConvergence(e) => write!(f, "maximizer did not converge: {e}"),
            Self::NoRegionAccepted => write!(f, "no chamber or corner region accepted"),
        }
    }
}

impl std::error::Error for SolveError {}

/// A torus-invariant point: a stratum plus coordinates on it. The interior
/// uses the full rho in R^m; a face uses chart coordinates of its potential;
/// a vertex has no coordinates.
#[derive(Clone, Debug)]
pub struct OrbitPoint {
    pub stratum: Stratum,
    pub rho: DVector<f64>,
}

impl OrbitPoint {
    pub fn interior(rho: Vec<f64>) -> Self {
        Self { stratum: Stratum::Interior, rho: DVector::from_vec(rho) }
    }

    pub fn face(id: usize, rho: Vec<f64>) -> Self {
        Self { stratum: Stratum::Face(id), rho: DVector::from_vec(rho) }
    }

    pub fn vertex(id: usize) -> Self {
        Self { stratum: Stratum::Vertex(id), rho: DVector::zeros(0) }
    }
}

/// Chart data for one stratum.
#[derive(Clone, Debug)]
pub struct Chart {
    pub stratum: Stratum,
    pub dim: usize,
    pub base: Vec<Rat>,
    pub basis: Vec<Vec<BigInt>>,
    pub base_f: DVector<f64>,
    pub basis_f: DMatrix<f64>,
    /// Closure lattice of the stratum's face at level 1, chart coordinates.
    pub lattice_local: Vec<Vec<i64>>,
    pub lattice_ambient: Vec<Vec<i64>>,
    /// Facet constraints with a nonzero trace on the chart, exact form.
    pub hrep_local: Vec<(Vec<Rat>, Rat)>,
    hrep_local_f: Vec<(Vec<f64>, f64, f64)>,
    lattice_flat: Vec<f64>,
    pinv: DMatrix<f64>,
}

impl Chart {
    /// Ambient coordinates of a local float point.
    pub fn to_ambient_f(&self, y: &DVector<f64>) -> Vec<f64> {
        let x = &self.base_f + &self.basis_f * y;
        x.iter().copied().collect()
    }

    /// Least-squares local coordinates and the projection residual.
    pub fn to_local_f(&self, x: &[f64]) -> (DVector<f64>, f64) {
        let r = DVector::from_iterator(x.len(), x.iter().zip(self.base_f.iter()).map(|(a, b)| a - b));
        if self.dim == 0 {
            return (DVector::zeros(0), r.amax());
        }
        let y = &self.pinv * &r;
        let resid = (&self.basis_f * &y - r).amax();
        (y, resid)
    }

    /// Signed lattice-normalized distance to the nearest chart-local facet;
    /// +inf for a vertex chart (no constraints).
    pub fn boundary_distance(&self, y: &DVector<f64>) -> f64 {
        let mut best = f64::INFINITY;
        for (n, a, norm) in &self.hrep_local_f {
            let slack: f64 = n.iter().zip(y.iter()).map(|(c, v)| c * v).sum::<f64>() - a;
            best = best.min(slack / norm);
        }
        best
    }
}

#[derive(Clone, Debug)]
pub struct PhiEval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct U0 {
    pub value: f64,
    pub rho_star: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct U0Closed {
    pub stratum: Stratum,
    pub value: f64,
    pub rho_star: DVector<f64>,
    pub local: DVector<f64>,
}

pub struct ToricPotential {
    polytope: DelzantPolytope,
    charts: Vec<Chart>,
}

impl ToricPotential {
    pub fn new(polytope: &DelzantPolytope) -> Self {
        let m = polytope.dim();
        let lattice = polytope.lattice_points(1);
        let mut charts = Vec::new();
        // Interior: identity chart over the full lattice.
        let identity_basis: Vec<Vec<BigInt>> = (0..m)
            .map(|j| (0..m).map(|i| BigInt::from((i == j) as i64)).collect())
            .collect();
        charts.push(build_chart(
            polytope,
            Stratum::Interior,
            vec![Rat::zero(); m],
            identity_basis,
            &lattice,
        ));
        for (i, face) in polytope.faces().iter().enumerate() {
            charts.push(build_chart(
                polytope,
                Stratum::Face(i),
                face.chart.base.clone(),
                face.chart.basis.clone(),
                &lattice,
            ));
        }
        for (i, v) in polytope.vertices().iter().enumerate() {
            charts.push(build_chart(polytope, Stratum::Vertex(i), v.clone(), Vec::new(), &lattice));
        }
        Self { polytope: polytope.clone(), charts }
    }

    pub fn polytope(&self) -> &DelzantPolytope {
        &self.polytope
    }

    pub fn charts(&self) -> &[Chart] {
        &self.charts
    }

    pub fn chart_index(&self, stratum: &Stratum) -> usize {
        match stratum {
            Stratum::Interior => 0,
            Stratum::Face(i) => 1 + i,
            Stratum::Vertex(i) => 1 + self.polytope.faces().len() + i,
        }
    }

    pub fn chart(&self, stratum: &Stratum) -> &Chart {
        &self.charts[self.chart_index(stratum)]
    }

    /// Value, gradient, Hessian of the stratum potential at local rho.
    /// The gradient is the softmax mean of the chart lattice, the Hessian its
    /// covariance; both stay finite for any finite rho by max-subtraction.
    pub fn phi(&self, stratum: &Stratum, rho: &DVector<f64>) -> PhiEval {
        self.phi_chart(self.chart_index(stratum), rho)
    }

    pub fn phi_chart(&self, idx: usize, rho: &DVector<f64>) -> PhiEval {
        let chart = &self.charts[idx];
        let d = chart.dim;
        assert_eq!(rho.len(), d, "rho dimension mismatch with stratum");
        let npts = chart.lattice_local.len();
        if d == 0 {
            return PhiEval { value: 0.0, grad: DVector::zeros(0), hess: DMatrix::zeros(0, 0) };
        }
        let pts = &chart.lattice_flat;
        let mut exponents = vec![0.0f64; npts];
        let mut emax = f64::NEG_INFINITY;
        for (i, e) in exponents.iter_mut().enumerate() {
            let mut s = 0.0;
            for j in 0..d {
                s += pts[i * d + j] * rho[j];
            }
            *e = s;
            emax = emax.max(s);
        }
        let mut total = 0.0;
        let mut grad = DVector::zeros(d);
        for (i, e) in exponents.iter_mut().enumerate() {
            let w = (*e - emax).exp();
            *e = w;
            total += w;
            for j in 0..d {
                grad[j] += w * pts[i * d + j];
            }
        }
        grad /= total;
        let mut hess = DMatrix::zeros(d, d);
        for (i, w) in exponents.iter().enumerate() {
            for a in 0..d {
                let ca = pts[i * d + a] - grad[a];
                for b in a..d {
                    hess[(a, b)] += w * ca * (pts[i * d + b] - grad[b]);
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let v = hess[(a, b)] / total;
                hess[(a, b)] = v;
                hess[(b, a)] = v;
            }
        }
        PhiEval { value: emax + total.ln(), grad, hess }
    }

    /// Value of the stratum potential together with the determinant of its
    /// Hessian, with the determinant summed over lattice pair terms that are
    /// each nonnegative. Far along a normal cone the covariance is nearly
    /// singular and the entrywise determinant cancels to sign-flipping
    /// roundoff; the pair form keeps full relative accuracy there, which the
    /// norming quadrature needs to see a smooth integrand. Quadratic in the
    /// pair count, so meant for small chart lattices; above two dimensions
    /// it falls back to the entrywise determinant.
    pub fn phi_value_det(&self, idx: usize, rho: &DVector<f64>) -> (f64, f64) {
        let chart = &self.charts[idx];
        let d = chart.dim;
        assert_eq!(rho.len(), d, "rho dimension mismatch with stratum");
        if d == 0 {
            return (0.0, 1.0);
        }
        if d > 2 {
            let e = self.phi_chart(idx, rho);
            return (e.value, e.hess.determinant());
        }
        let pts = &chart.lattice_flat;
        let npts = chart.lattice_local.len();
        let mut w = vec![0.0f64; npts];
        let mut emax = f64::NEG_INFINITY;
        for (i, e) in w.iter_mut().enumerate() {
            let mut s = 0.0;
            for j in 0..d {
                s += pts[i * d + j] * rho[j];
            }
            *e = s;
            emax = emax.max(s);
        }
        let mut total = 0.0;
        for v in &mut w {
            *v = (*v - emax).exp();
            total += *v;
        }
        for v in &mut w {
            *v /= total;
        }
        let value = emax + total.ln();
        if d == 1 {
            let mut det = 0.0;
            for i in 0..npts {
                for j in i + 1..npts {
                    let diff = pts[i] - pts[j];
                    det += w[i] * w[j] * diff * diff;
                }
            }
            return (value, det);
        }
        // The covariance is the sum over lattice pairs of
        // w_i w_j (b_i - b_j)(b_i - b_j)^T, so by Cauchy-Binet its
        // determinant is the sum over pairs of pairs of the squared cross
        // product of the integer difference vectors, every term exact.
        let mut det = 0.0;
        for i in 0..npts {
            for j in i + 1..npts {
                let ax = pts[i * 2] - pts[j * 2];
                let ay = pts[i * 2 + 1] - pts[j * 2 + 1];
                let wa = w[i] * w[j];
                for p in i..npts {
                    let q0 = if p == i { j + 1 } else { p + 1 };
                    for q in q0..npts {
                        let bx = pts[p * 2] - pts[q * 2];
                        let by = pts[p * 2 + 1] - pts[q * 2 + 1];
                        let cross = ax * by - ay * bx;
                        det += wa * w[p] * w[q] * cross * cross;
                    }
                }
            }
        }
        (value, det)
    }

    /// Ambient moment-map image of an orbit point; lands in the closed face.
    pub fn moment(&self, z: &OrbitPoint) -> Vec<f64> {
        let idx = self.chart_index(&z.stratum);
        let grad = self.phi_chart(idx, &z.rho).grad;
        self.charts[idx].to_ambient_f(&grad)
    }

    /// Symplectic potential u0 on a stratum: sup_rho(<x,rho> - phi_S(rho))
    /// for ambient x in the relative interior of the stratum's face.
    pub fn u0(&self, stratum: &Stratum, x: &[f64]) -> Result<U0, SolveError> {
        let idx = self.chart_index(stratum);
        let chart = &self.charts[idx];
        let (y, resid) = chart.to_local_f(x);
        let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if resid > BOUNDARY_TOL * scale {
            return Err(SolveError::OffStratum);
        }
        self.u0_local(idx, &y)
    }

    /// Same as `u0` with the point already in chart coordinates.
    pub fn u0_local(&self, idx: usize, y: &DVector<f64>) -> Result<U0, SolveError> {
        let chart = &self.charts[idx];
        if chart.dim == 0 {
            return Ok(U0 { value: 0.0, rho_star: DVector::zeros(0) });
        }
        let dist = chart.boundary_distance(y);
        if dist < -BOUNDARY_TOL {
            return Err(SolveError::OffStratum);
        }
        if dist < BOUNDARY_TOL {
            return Err(SolveError::BoundaryPoint);
        }
        self.legendre_solve(idx, y)
    }

    fn legendre_solve(&self, idx: usize, y: &DVector<f64>) -> Result<U0, SolveError> {
        let d = self.charts[idx].dim;
        let obj = |rho: &DVector<f64>| {
            let e = self.phi_chart(idx, rho);
            Some((y.dot(rho) - e.value, y - e.grad, -e.hess))
        };
        match newton::maximize_concave(DVector::zeros(d), obj, NEWTON_TOL) {
            Ok(r) => Ok(U0 { value: r.value, rho_star: r.x }),
            Err(e) => Err(SolveError::NoConvergence(e)),
        }
    }

    /// u0 on the closure of P: locates the stratum of x (tolerance-governed)
    /// and solves on that stratum. Total on all of the closed polytope.
    pub fn u0_closed(&self, x: &[f64], tol: f64) -> Result<U0Closed, SolveError> {
        let tol = tol.max(BOUNDARY_TOL);
        let stratum = match self.polytope.locate(x, tol) {
            Ok(s) => s,
            Err(PolytopeError::OutsidePolytope) => return Err(SolveError::OffStratum),
            Err(_) => return Err(SolveError::OffStratum),
        };
        let idx = self.chart_index(&stratum);
        let chart = &self.charts[idx];
        let (y, _) = chart.to_local_f(x);
        if chart.dim == 0 {
            return Ok(U0Closed {
                stratum,
                value: 0.0,
                rho_star: DVector::zeros(0),
                local: DVector::zeros(0),
            });
        }
        let sol = self.legendre_solve(idx, &y)?;
        Ok(U0Closed { stratum, value: sol.value, rho_star: sol.rho_star, local: y })
    }

    /// Closure lattice of the stratum's face at level n, as (ambient, chart
    /// coordinates) pairs. Chart coordinates are taken against base n*base,
    /// so they are again integer vectors.
    pub fn level_lattice(&self, idx: usize, n: u32) -> (Vec<Vec<i64>>, Vec<Vec<i64>>) {
        let chart = &self.charts[idx];
        let all = self.polytope.lattice_points(n);
        let n_rat = exact::rat_int(n as i64);
        let active: Vec<usize> = match &chart.stratum {
            Stratum::Interior => Vec::new(),
            Stratum::Face(i) => self.polytope.faces()[*i].active.iter().copied().collect(),
            Stratum::Vertex(i) => self.polytope.vertex_active(*i).iter().copied().collect(),
        };
        let ambient: Vec<Vec<i64>> = all
            .into_iter()
            .filter(|alpha| {
                active.iter().all(|&r| {
                    let f = &self.polytope.facets()[r];
                    let d: i64 = f.normal.iter().zip(alpha).map(|(&a, &b)| a * b).sum();
                    Rat::from(BigInt::from(d)) == &f.offset * &n_rat
                })
            })
            .collect();
        let local = if matches!(chart.stratum, Stratum::Interior) {
            ambient.clone()
        } else {
            let cols: Vec<Vec<Rat>> = chart
                .basis
                .iter()
                .map(|c| c.iter().map(|z| Rat::from(z.clone())).collect())
                .collect();
            ambient
                .iter()
                .map(|alpha| {
                    let rhs: Vec<Rat> = alpha
                        .iter()
                        .zip(&chart.base)
                        .map(|(&a, b)| Rat::from(BigInt::from(a)) - b * &n_rat)
                        .collect();
                    if chart.dim == 0 {
                        assert!(rhs.iter().all(Zero::is_zero));
                        return Vec::new();
                    }
                    let y = exact::solve_columns(&cols, &rhs)
                        .expect("face lattice point lies on the face's affine hull");
                    y.iter()
                        .map(|c| {
                            assert!(c.denom() == &BigInt::from(1), "chart basis generates the lattice");
                            c.numer().to_i64().unwrap()
                        })
                        .collect()
                })
                .collect()
        };
        (ambient, local)
    }
}

fn build_chart(
    polytope: &DelzantPolytope,
    stratum: Stratum,
    base: Vec<Rat>,
    basis: Vec<Vec<BigInt>>,
    lattice: &[Vec<i64>],
) -> Chart {
    let m = polytope.dim();
    let d = basis.len();
    let active: Vec<usize> = match &stratum {
        Stratum::Interior => Vec::new(),
        Stratum::Face(i) => polytope.faces()[*i].active.iter().copied().collect(),
        Stratum::Vertex(i) => polytope.vertex_active(*i).iter().copied().collect(),
    };
    let lattice_ambient: Vec<Vec<i64>> = lattice
        .iter()
        .filter(|alpha| {
            active.iter().all(|&r| {
                let f = &polytope.facets()[r];
                let dot: i64 = f.normal.iter().zip(alpha.iter()).map(|(&a, &b)| a * b).sum();
                Rat::from(BigInt::from(dot)) == f.offset
            })
        })
        .cloned()
        .collect();
    let chart_rat = geometry::AffineChart { base: base.clone(), basis: basis.clone() };
    let lattice_local: Vec<Vec<i64>> = lattice_ambient
        .iter()
        .map(|alpha| {
            let x: Vec<Rat> = alpha.iter().map(|&a| exact::rat_int(a)).collect();
            let y = chart_rat.to_local(&x).expect("closure lattice point lies on the affine hull");
            y.iter()
                .map(|c| {
                    assert!(c.denom() == &BigInt::from(1), "chart basis generates the lattice");
                    c.numer().to_i64().unwrap()
                })
                .collect()
        })
        .collect();
    let mut hrep_local = Vec::new();
    for f in polytope.facets() {
        let normal: Vec<Rat> = f.normal.iter().map(|&c| exact::rat_int(c)).collect();
        if let Some(c) = chart_rat.pull_back(&normal, &f.offset) {
            hrep_local.push(c);
        }
    }
    let hrep_local_f: Vec<(Vec<f64>, f64, f64)> = hrep_local
        .iter()
        .map(|(n, a)| {
            let nf = exact::to_f64_vec(n);
            let norm = nf.iter().map(|c| c * c).sum::<f64>().sqrt();
            (nf, exact::to_f64(a), norm)
        })
        .collect();
    let base_f = DVector::from_vec(exact::to_f64_vec(&base));
    let basis_f = DMatrix::from_fn(m, d, |i, j| {
        Ratio::from(basis[j][i].clone()).to_f64().unwrap()
    });
    let pinv = if d == 0 {
        DMatrix::zeros(0, m)
    } else {
        (basis_f.transpose() * &basis_f)
            .try_inverse()
            .expect("chart basis has full column rank")
            * basis_f.transpose()
    };
    let mut lattice_flat = Vec::with_capacity(lattice_local.len() * d);
    for p in &lattice_local {
        for &c in p {
            lattice_flat.push(c as f64);
        }
    }
    Chart {
        stratum,
        dim: d,
        base,
        basis,
        base_f,
        basis_f,
        lattice_local,
        lattice_ambient,
        hrep_local,
        hrep_local_f,
        lattice_flat,
        pinv,
    }
}
