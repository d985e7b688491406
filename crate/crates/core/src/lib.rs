//! Numerical toolkit for toric Kahler geometry on Delzant polytopes.
//!
//! The crate builds the canonical lattice-sum potential of a Delzant
//! polytope, its Legendre dual, the weak geodesic ray attached to a
//! piecewise linear convex function, the finite-level Bergman measures
//! approximating it, and the large-deviation rate functions governing the
//! limit. Exact rational arithmetic backs everything polyhedral; the
//! analytic layer is plain f64 with damped Newton solves and adaptive
//! Gauss-Legendre quadrature.

pub mod bergman;
pub mod exact;
pub mod geodesic;
pub mod geometry;
pub mod ldp;
pub mod newton;
pub mod plconvex;
pub mod polytope;
pub mod potentials;
pub mod quadrature;
pub mod tol;

pub use exact::Rat;
pub use geodesic::{GeodesicEngine, GeodesicSolution, RegionTag, RegularityReport};
pub use ldp::{ConjugateCheck, ExtReal, LdpBound, VaradhanCheck};
pub use plconvex::{Piece, PlConvex, PlError, WeightTable};
pub use polytope::{DelzantPolytope, Face, Facet, PolytopeError, Stratum};
pub use potentials::{OrbitPoint, SolveError, ToricPotential};
