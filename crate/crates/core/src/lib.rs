//! Low-rank solver for all-at-once optimality systems of parabolic optimal
//! control problems.
//!
//! The discretized optimality system is rewritten as a generalized Sylvester
//! equation `A₁X + XC₁ + A₂XI₀ + A₃XD = F₁F₂ᵀ` with `X = [Y Λ]` and solved
//! by Galerkin projection onto a rational Krylov space. A direct solver for
//! the full space-time system is included for verification.

pub mod discretize;
pub mod linalg;
pub mod oracle;
pub mod problem;
pub mod residual;
pub mod solver;

use thiserror::Error;

pub use linalg::LinalgError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("grid level {level} exceeds the configured cap {cap}")]
    GridTooLarge { level: u32, cap: u32 },
    #[error("reduced system is singular at iteration {iteration} (p = {p})")]
    SingularReduced { iteration: usize, p: usize },
    #[error(
        "stagnation at iteration {iteration}: no new basis directions for {stalled} iterations \
         with residual {residual:.3e} above tolerance"
    )]
    Stagnation {
        iteration: usize,
        stalled: usize,
        residual: f64,
    },
    #[error("oracle size guard exceeded: {unknowns} unknowns > limit {limit}")]
    OracleGuard { unknowns: usize, limit: usize },
    #[error("direct solve of the full system failed: {0}")]
    OracleSingular(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
