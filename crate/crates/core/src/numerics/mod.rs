//! Dense matrices, seeded random streams, and small statistical primitives.
//!
//! Everything in this module is pure: identical inputs (including the state
//! of an [`RngStream`]) produce bit-identical outputs, which is what lets the
//! benchmark reproduce byte-identical result files across runs.

mod matrix;
mod rng;
mod solve;
mod stats;

pub use matrix::Matrix;
pub use rng::RngStream;
pub use solve::solve_spd;
pub use stats::{kfold, log_grid, spearman, standardize, Standardized};

use thiserror::Error;

/// Errors from the numeric primitives.
#[derive(Debug, Error)]
pub enum NumericsError {
    /// A value that must be finite was NaN or infinite.
    #[error("{context}: encountered a non-finite value")]
    NonFinite { context: &'static str },

    /// Two lengths or dimensions that must agree did not.
    #[error("{context}: dimension mismatch ({left} vs {right})")]
    DimensionMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    /// A matrix buffer whose length is not `rows * cols`.
    #[error("cannot shape {len} values into a {rows}x{cols} matrix")]
    BadShape {
        rows: usize,
        cols: usize,
        len: usize,
    },

    /// `solve_spd` requires a symmetric input.
    #[error("solve_spd: matrix is not symmetric at ({row},{col})")]
    NotSymmetric { row: usize, col: usize },

    /// Cholesky factorization hit a pivot at or below the tolerance, so the
    /// matrix is singular or indefinite as far as the solver is concerned.
    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    /// An operation that needs at least `min` values got fewer.
    #[error("{context}: need at least {min} values, got {len}")]
    TooFewValues {
        context: &'static str,
        min: usize,
        len: usize,
    },

    /// Rank correlation is undefined when one input has zero rank variance.
    #[error("{context}: input is constant, rank correlation undefined")]
    ConstantInput { context: &'static str },

    /// `log_grid` with a zero-point grid.
    #[error("log_grid: grid must contain at least one point")]
    EmptyGrid,

    /// `kfold` with `k` outside `2..=n`.
    #[error("kfold: k={k} must satisfy 2 <= k <= n={n}")]
    BadFoldCount { k: usize, n: usize },
}
