//! Dense and sparse linear-algebra substrate.
//!
//! Dense matrices are `nalgebra::DMatrix<f64>` (column-major). Sparse
//! matrices use a compressed-sparse-row layout and are factorized with a
//! banded LU/Cholesky after a bandwidth-reducing symmetric permutation.

mod banded;
mod dense;
pub mod market;
mod sparse;

pub use banded::{sparse_factorize, SparseFactorization};
pub use dense::{
    dense_solve, dense_svd, frobenius_norm, gram_schmidt_append, trace_product, DenseMatrix,
    GsOutcome, OrthoBasis, Svd, BREAKDOWN_TOL,
};
pub use sparse::SparseMatrix;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular to working precision (pivot {index})")]
    Singular { index: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error("matrix must be square, got {nrows}x{ncols}")]
    NotSquare { nrows: usize, ncols: usize },
    #[error("index ({row}, {col}) out of bounds for {nrows}x{ncols} matrix")]
    OutOfBounds {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },
    #[error("MatrixMarket parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for LinalgError {
    fn from(e: std::io::Error) -> Self {
        LinalgError::Io(e.to_string())
    }
}
