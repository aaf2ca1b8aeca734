//! Exact Courant algebroids on coordinate charts, their equivariant
//! reduction over Drinfeld doubles, and the Poisson-Lie T-duality pipeline
//! on light-cone lattices.
//!
//! Every construction is checked by residuals: algebraic identities are
//! evaluated exactly (polynomial coefficients, Chevalley-Eilenberg cochains)
//! and lattice statements are verified through convergence studies.

pub mod courant;
pub mod duality;
pub mod equivariant;
pub mod error;
pub mod fd;
pub mod invariant;
pub mod liealg;
pub mod linalg;
pub mod poly;
pub mod reduction;
pub mod sampling;
pub mod scenario;
pub mod sigma;
pub mod study;

pub use error::{Error, Result};
