//! Finite element solution of semilinear elliptic interface problems of
//! Poisson-Boltzmann type, with guaranteed and fully computable a posteriori
//! error bounds.
//!
//! The library solves
//!
//! ```text
//!   -div(eps grad u) + k^2 sinh(u + w) = l   in Omega_1 u Omega_2,
//!   [u] = [eps du/dn] = 0                    on the interface Gamma,
//!   u = 0                                    on the outer boundary,
//! ```
//!
//! on conforming triangle meshes with piecewise constant `eps` and `k`, and
//! computes two-sided bounds on the discretization error from convex duality:
//! an error majorant built from any H(div) flux reconstruction, a lower bound
//! on the combined energy norm, localized error indicators, and an adaptive
//! refinement loop driven by them.
//!
//! Module map:
//! - [`mesh`]: interface-tagged triangulations, newest-vertex bisection,
//!   vertex patches, text/VTK formats
//! - [`quad`]: symmetric triangle quadrature
//! - [`scalar`]: stable closed forms for the dual nonlinearity
//! - [`fem`]: P1 space, assembly, energy functional
//! - [`newton`]: damped Newton solver and reference-problem construction
//! - [`flux`]: Raviart-Thomas flux equilibration and gradient averaging
//! - [`estimator`]: majorant/minorant, true-error decomposition, efficiency
//!   indices
//! - [`amr`]: marking strategies and the adaptive campaign driver
//! - [`preset`]: ready-made problem configurations
//! - [`verify`]: self-check suites exposed to the command line

pub mod amr;
pub mod estimator;
pub mod fem;
pub mod flux;
pub mod geo;
pub mod linalg;
pub mod mesh;
pub mod newton;
pub mod preset;
pub mod quad;
pub mod report;
pub mod scalar;
pub mod verify;
pub mod vtk;

pub use mesh::Mesh;
