use super::{Matrix, NumericsError};

/// Minimum Cholesky pivot. Anything at or below this is treated as singular.
const MIN_PIVOT: f64 = 1e-12;

/// Relative tolerance for the symmetry check in [`solve_spd`].
const SYMMETRY_RTOL: f64 = 1e-8;

/// Solves `A x = b` for symmetric positive definite `A` via Cholesky.
///
/// Returns an error when `A` is not square, not symmetric, when `b` has the
/// wrong length or non-finite entries, or when a pivot falls below `1e-12`
/// (the matrix is singular or indefinite for the solver's purposes).
pub fn solve_spd(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, NumericsError> {
    let n = a.rows();
    if a.cols() != n {
        return Err(NumericsError::DimensionMismatch {
            context: "solve_spd matrix",
            left: n,
            right: a.cols(),
        });
    }
    if b.len() != n {
        return Err(NumericsError::DimensionMismatch {
            context: "solve_spd rhs",
            left: n,
            right: b.len(),
        });
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite {
            context: "solve_spd rhs",
        });
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let ij = a.get(i, j);
            let ji = a.get(j, i);
            let scale = ij.abs().max(ji.abs()).max(1.0);
            if (ij - ji).abs() > SYMMETRY_RTOL * scale {
                return Err(NumericsError::NotSymmetric { row: i, col: j });
            }
        }
    }

    // Lower-triangular factor, stored row-major so the inner products below
    // run over contiguous slices.
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut diag = a.get(j, j) - dot(&l[j * n..j * n + j], &l[j * n..j * n + j]);
        if diag <= MIN_PIVOT {
            return Err(NumericsError::NotPositiveDefinite {
                row: j,
                pivot: diag,
            });
        }
        diag = diag.sqrt();
        l[j * n + j] = diag;
        for i in (j + 1)..n {
            let s = dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            l[i * n + j] = (a.get(i, j) - s) / diag;
        }
    }

    // Forward substitution L y = b.
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s = dot(&l[i * n..i * n + i], &y[..i]);
        y[i] = (b[i] - s) / l[i * n + i];
    }
    // Back substitution L^T x = y.
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = 0.0;
        for k in (i + 1)..n {
            s += l[k * n + i] * x[k];
        }
        x[i] = (y[i] - s) / l[i * n + i];
    }
    Ok(x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
