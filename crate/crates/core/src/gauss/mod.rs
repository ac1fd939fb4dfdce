//! Gaussian factors over typed variable scopes.
//!
//! The canonical representation is the information form (precision matrix,
//! information vector, log scale), which stays closed under the operations
//! inference needs: products, quotients, marginalization, and conditioning.
//! Moment form is available as a constructor and a view. Positive
//! definiteness is always decided by Cholesky pivots against
//! [`PD_PIVOT_TOL`], so "is this a proper density" has one answer everywhere.

mod chol;
mod factor;
mod scope;

pub use chol::cholesky_with_tol;
pub use factor::{
    Assignment, GaussError, GaussianFactor, PD_PIVOT_TOL, SYMMETRY_TOL,
};
pub use scope::{Scope, VarId};
