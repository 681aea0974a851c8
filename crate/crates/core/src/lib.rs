//! Renormalized-area laboratory.
//!
//! Finite-part regularization of polyhomogeneous integrals, exact hemisphere
//! Jacobi fields and special constants, a spectral minimal-surface solver for
//! asymptotically hyperbolic metrics, and the inverse pipeline that recovers
//! metric expansion coefficients from renormalized areas.

pub mod hemisphere;
pub mod hypgeom;
pub mod inverse;
pub mod phg;
pub mod quad;
pub mod riesz;
pub mod solver;

/// Any failure raised by the library, for callers that drive several modules.
#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Series(#[from] phg::PhgError),
    #[error(transparent)]
    Riesz(#[from] riesz::RieszError),
    #[error(transparent)]
    Hypergeometric(#[from] hypgeom::HypError),
    #[error(transparent)]
    Hemisphere(#[from] hemisphere::HemisphereError),
    #[error(transparent)]
    Solver(#[from] solver::SolverError),
    #[error(transparent)]
    Inverse(#[from] inverse::InverseError),
}
