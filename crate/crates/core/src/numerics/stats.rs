use rand::seq::SliceRandom;

use super::{Matrix, NumericsError, RngStream};

/// Zero threshold for a column's standard deviation in [`standardize`].
const SD_FLOOR: f64 = 1e-12;

/// Logarithmically spaced grid from `10^start` to `10^end`, inclusive.
///
/// With `count == 1` the grid is just `[10^start]`. Integer exponents are
/// computed exactly, so `log_grid(-4.0, 5.0, 10)` reproduces the decade grid
/// `[1e-4, 1e-3, ..., 1e5]` bit for bit.
pub fn log_grid(start: f64, end: f64, count: usize) -> Result<Vec<f64>, NumericsError> {
    if count == 0 {
        return Err(NumericsError::EmptyGrid);
    }
    if !start.is_finite() || !end.is_finite() {
        return Err(NumericsError::NonFinite { context: "log_grid" });
    }
    if count == 1 {
        return Ok(vec![pow10(start)]);
    }
    let step = (end - start) / (count - 1) as f64;
    Ok((0..count)
        .map(|i| {
            let exponent = if i == count - 1 {
                end
            } else {
                start + i as f64 * step
            };
            pow10(exponent)
        })
        .collect())
}

fn pow10(exponent: f64) -> f64 {
    if exponent.fract() == 0.0 && exponent.abs() <= 300.0 {
        let k = exponent as i32;
        // powi on integer powers of ten is exact up to 1e22, and the
        // reciprocal rounds correctly, matching decimal literals.
        if k >= 0 {
            10f64.powi(k)
        } else {
            1.0 / 10f64.powi(-k)
        }
    } else {
        10f64.powf(exponent)
    }
}

/// Spearman rank correlation with average ranks for ties.
///
/// Errors when the slices differ in length, are shorter than two, contain
/// non-finite values, or when either side has zero rank variance.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, NumericsError> {
    if a.len() != b.len() {
        return Err(NumericsError::DimensionMismatch {
            context: "spearman",
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(NumericsError::TooFewValues {
            context: "spearman",
            min: 2,
            len: a.len(),
        });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite { context: "spearman" });
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    pearson(&ra, &rb)
}

/// 1-based ranks; tied values share the mean of the ranks they occupy.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Ranks start..end are occupied by one tied group.
        let mean_rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = mean_rank;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64, NumericsError> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return Err(NumericsError::ConstantInput { context: "spearman" });
    }
    Ok(cov / (va * vb).sqrt())
}

/// Shuffled k-fold partition of `0..n`, each fold sorted ascending.
///
/// Fold sizes differ by at most one. The shuffle is drawn from `rng`, so the
/// same stream always yields the same folds.
pub fn kfold(n: usize, k: usize, rng: &RngStream) -> Result<Vec<Vec<usize>>, NumericsError> {
    if k < 2 || k > n {
        return Err(NumericsError::BadFoldCount { k, n });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng.rng());
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut offset = 0;
    for fold_idx in 0..k {
        let size = base + usize::from(fold_idx < extra);
        let mut fold: Vec<usize> = indices[offset..offset + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        offset += size;
    }
    Ok(folds)
}

/// Column-standardized copy of a matrix plus the applied transform.
#[derive(Debug, Clone)]
pub struct Standardized {
    pub data: Matrix,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardized {
    /// Applies the stored transform to new rows of the same width.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix, NumericsError> {
        apply_transform(x, &self.means, &self.scales)
    }
}

/// Centers each column by its mean and scales by its population standard
/// deviation. Columns with standard deviation below `1e-12` are centered
/// only, with the scale recorded as one.
pub fn standardize(x: &Matrix) -> Result<Standardized, NumericsError> {
    if x.rows() == 0 {
        return Err(NumericsError::TooFewValues {
            context: "standardize",
            min: 1,
            len: 0,
        });
    }
    let n = x.rows() as f64;
    let mut means = vec![0.0; x.cols()];
    let mut scales = vec![0.0; x.cols()];
    for col in 0..x.cols() {
        let mut sum = 0.0;
        for row in 0..x.rows() {
            sum += x.get(row, col);
        }
        let mean = sum / n;
        let mut ss = 0.0;
        for row in 0..x.rows() {
            let d = x.get(row, col) - mean;
            ss += d * d;
        }
        let sd = (ss / n).sqrt();
        means[col] = mean;
        scales[col] = if sd < SD_FLOOR { 1.0 } else { sd };
    }
    let data = apply_transform(x, &means, &scales)?;
    Ok(Standardized {
        data,
        means,
        scales,
    })
}

fn apply_transform(x: &Matrix, means: &[f64], scales: &[f64]) -> Result<Matrix, NumericsError> {
    if x.cols() != means.len() {
        return Err(NumericsError::DimensionMismatch {
            context: "standardize apply",
            left: means.len(),
            right: x.cols(),
        });
    }
    let mut data = Vec::with_capacity(x.rows() * x.cols());
    for row in x.iter_rows() {
        for (col, &value) in row.iter().enumerate() {
            data.push((value - means[col]) / scales[col]);
        }
    }
    Matrix::from_vec(x.rows(), x.cols(), data)
}
