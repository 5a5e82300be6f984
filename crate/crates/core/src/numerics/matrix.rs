use serde::{Deserialize, Serialize};

use super::NumericsError;

/// Dense row-major matrix of `f64` values.
///
/// Construction validates that every entry is finite and that the buffer
/// matches the declared shape, so downstream code can rely on both without
/// re-checking. The container is immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from a row-major buffer of length `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::BadShape {
                rows,
                cols,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite { context: "matrix" });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows. At least one row is required
    /// so the column count is well defined.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let Some(first) = rows.first() else {
            return Err(NumericsError::TooFewValues {
                context: "matrix rows",
                min: 1,
                len: 0,
            });
        };
        let cols = first.len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(NumericsError::DimensionMismatch {
                    context: "matrix rows",
                    left: cols,
                    right: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    /// All-zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Entry at `(row, col)`. Panics when out of bounds, like slice indexing.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        assert!(row < self.rows && col < self.cols, "matrix index out of bounds");
        self.data[row * self.cols + col]
    }

    /// Row `row` as a slice.
    pub fn row(&self, row: usize) -> &[f64] {
        assert!(row < self.rows, "matrix row out of bounds");
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Column `col` as an owned vector.
    pub fn column(&self, col: usize) -> Vec<f64> {
        assert!(col < self.cols, "matrix column out of bounds");
        (0..self.rows).map(|r| self.data[r * self.cols + col]).collect()
    }

    /// Row-major view of the whole buffer.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// New matrix holding the given rows, in the given order. Indices may
    /// repeat. Panics when an index is out of bounds.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &idx in indices {
            data.extend_from_slice(self.row(idx));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// New matrix with `extra` appended as a final column.
    pub fn with_extra_column(&self, extra: &[f64]) -> Result<Self, NumericsError> {
        if extra.len() != self.rows {
            return Err(NumericsError::DimensionMismatch {
                context: "matrix extra column",
                left: self.rows,
                right: extra.len(),
            });
        }
        let cols = self.cols + 1;
        let mut data = Vec::with_capacity(self.rows * cols);
        for (row, &value) in self.data.chunks_exact(self.cols).zip(extra) {
            data.extend_from_slice(row);
            data.push(value);
        }
        Self::from_vec(self.rows, cols, data)
    }

    /// Iterator over the rows as slices.
    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }
}
