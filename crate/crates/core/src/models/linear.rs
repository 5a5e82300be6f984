//! Least squares, ridge, and coordinate-descent lasso / elastic net.
//!
//! All penalized fits standardize features by their weighted mean and
//! weighted population standard deviation, center the targets, and leave the
//! intercept unpenalized. Penalties follow the usual scikit-style
//! conventions: ridge minimizes `sum_i w_i r_i^2 + alpha * |b|^2`, while
//! lasso and elastic net minimize
//! `sum_i w_i r_i^2 / (2 sum_i w_i) + alpha * (l1 |b|_1 + (1 - l1)/2 |b|^2)`.

use crate::numerics::Matrix;

use super::{solve_spd_stabilized, ModelsError, RegressorFamily, RegressorSpec};

/// Coordinate descent stops when no coefficient moves more than this.
const CD_TOL: f64 = 1e-7;

/// Hard cap on coordinate-descent sweeps.
const CD_MAX_SWEEPS: usize = 10_000;

/// Column scales below this are treated as zero variance.
const SD_FLOOR: f64 = 1e-12;

/// Degree-two feature expansions used by the polynomial families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Expansion {
    /// Raw covariates.
    Identity,
    /// Covariates plus their squares.
    Squares,
    /// Covariates, squares, and pairwise products.
    Full,
}

impl Expansion {
    pub(super) fn width(&self, d: usize) -> usize {
        match self {
            Expansion::Identity => d,
            Expansion::Squares => 2 * d,
            Expansion::Full => 2 * d + d * (d - 1) / 2,
        }
    }

    pub(super) fn expand_into(&self, row: &[f64], out: &mut Vec<f64>) {
        out.extend_from_slice(row);
        if matches!(self, Expansion::Squares | Expansion::Full) {
            out.extend(row.iter().map(|v| v * v));
        }
        if matches!(self, Expansion::Full) {
            for i in 0..row.len() {
                for j in (i + 1)..row.len() {
                    out.push(row[i] * row[j]);
                }
            }
        }
    }

    pub(super) fn expand_matrix(&self, x: &Matrix) -> Matrix {
        let width = self.width(x.cols());
        let mut data = Vec::with_capacity(x.rows() * width);
        for row in x.iter_rows() {
            self.expand_into(row, &mut data);
        }
        Matrix::from_vec(x.rows(), width, data).expect("finite expansion of finite input")
    }
}

/// Weighted column standardization, reusable at predict time.
#[derive(Debug, Clone)]
pub(super) struct WeightedScaler {
    means: Vec<f64>,
    scales: Vec<f64>,
}

impl WeightedScaler {
    /// Fits means and population standard deviations under `w`. All weights
    /// are positive here; zero-weight rows were dropped upstream.
    pub(super) fn fit(x: &Matrix, w: &[f64]) -> Self {
        let sw: f64 = w.iter().sum();
        let mut means = vec![0.0; x.cols()];
        let mut scales = vec![0.0; x.cols()];
        for col in 0..x.cols() {
            let mut sum = 0.0;
            for (i, &wi) in w.iter().enumerate() {
                sum += wi * x.get(i, col);
            }
            let mean = sum / sw;
            let mut ss = 0.0;
            for (i, &wi) in w.iter().enumerate() {
                let d = x.get(i, col) - mean;
                ss += wi * d * d;
            }
            let sd = (ss / sw).sqrt();
            means[col] = mean;
            scales[col] = if sd < SD_FLOOR { 1.0 } else { sd };
        }
        Self { means, scales }
    }

    pub(super) fn transform(&self, x: &Matrix) -> Matrix {
        let mut data = Vec::with_capacity(x.rows() * x.cols());
        for row in x.iter_rows() {
            for (col, &v) in row.iter().enumerate() {
                data.push((v - self.means[col]) / self.scales[col]);
            }
        }
        Matrix::from_vec(x.rows(), x.cols(), data).expect("finite standardization")
    }

    pub(super) fn transform_row(&self, row: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            row.iter()
                .enumerate()
                .map(|(col, &v)| (v - self.means[col]) / self.scales[col]),
        );
    }
}

/// Fitted linear-in-features model covering six regressor families.
#[derive(Debug, Clone)]
pub(crate) struct LinearModel {
    expansion: Expansion,
    scaler: WeightedScaler,
    intercept: f64,
    coefs: Vec<f64>,
}

impl LinearModel {
    pub(crate) fn predict(&self, x: &Matrix) -> Vec<f64> {
        let mut expanded = Vec::new();
        let mut standardized = Vec::new();
        x.iter_rows()
            .map(|row| {
                expanded.clear();
                self.expansion.expand_into(row, &mut expanded);
                self.scaler.transform_row(&expanded, &mut standardized);
                self.intercept
                    + self
                        .coefs
                        .iter()
                        .zip(&standardized)
                        .map(|(c, z)| c * z)
                        .sum::<f64>()
            })
            .collect()
    }

    #[cfg(test)]
    pub(crate) fn coef_norm(&self) -> f64 {
        self.coefs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

pub(super) fn fit(
    spec: &RegressorSpec,
    x: &Matrix,
    y: &[f64],
    w: &[f64],
) -> Result<LinearModel, ModelsError> {
    let expansion = match spec.family {
        RegressorFamily::Poly2 => Expansion::Squares,
        RegressorFamily::Poly2Interaction => Expansion::Full,
        _ => Expansion::Identity,
    };
    let design = expansion.expand_matrix(x);
    let scaler = WeightedScaler::fit(&design, w);
    let z = scaler.transform(&design);

    let sw: f64 = w.iter().sum();
    let ybar = y.iter().zip(w).map(|(yi, wi)| yi * wi).sum::<f64>() / sw;
    let yc: Vec<f64> = y.iter().map(|yi| yi - ybar).collect();

    let coefs = match spec.family {
        RegressorFamily::Linear | RegressorFamily::Poly2 | RegressorFamily::Poly2Interaction => {
            solve_normal_equations(&z, &yc, w, 0.0)?
        }
        RegressorFamily::Ridge => solve_normal_equations(&z, &yc, w, spec.alpha.unwrap())?,
        RegressorFamily::Lasso => coordinate_descent(&z, &yc, w, spec.alpha.unwrap(), 1.0),
        RegressorFamily::ElasticNet => {
            coordinate_descent(&z, &yc, w, spec.alpha.unwrap(), spec.l1_ratio.unwrap())
        }
        other => unreachable!("not a linear family: {other:?}"),
    };

    Ok(LinearModel {
        expansion,
        scaler,
        intercept: ybar,
        coefs,
    })
}

/// Solves `(Z' W Z + alpha I) b = Z' W y`.
fn solve_normal_equations(
    z: &Matrix,
    y: &[f64],
    w: &[f64],
    alpha: f64,
) -> Result<Vec<f64>, ModelsError> {
    let p = z.cols();
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for (i, row) in z.iter_rows().enumerate() {
        let wi = w[i];
        for j in 0..p {
            let wz = wi * row[j];
            rhs[j] += wz * y[i];
            for k in j..p {
                gram[j * p + k] += wz * row[k];
            }
        }
    }
    for j in 0..p {
        gram[j * p + j] += alpha;
        for k in (j + 1)..p {
            gram[k * p + j] = gram[j * p + k];
        }
    }
    solve_spd_stabilized(&Matrix::from_vec(p, p, gram)?, &rhs)
}

/// Cyclic coordinate descent for lasso (`l1_ratio = 1`) and elastic net.
fn coordinate_descent(z: &Matrix, y: &[f64], w: &[f64], alpha: f64, l1_ratio: f64) -> Vec<f64> {
    let n = z.rows();
    let p = z.cols();
    let sw: f64 = w.iter().sum();
    let l1 = alpha * l1_ratio;
    let l2 = alpha * (1.0 - l1_ratio);

    // Per-feature second moments (1/sw) sum_i w_i z_ij^2.
    let mut moments = vec![0.0; p];
    for (i, row) in z.iter_rows().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            moments[j] += w[i] * v * v;
        }
    }
    for m in &mut moments {
        *m /= sw;
    }

    let mut beta = vec![0.0; p];
    let mut residual = y.to_vec();
    for _ in 0..CD_MAX_SWEEPS {
        let mut max_step: f64 = 0.0;
        for j in 0..p {
            let denom = moments[j] + l2;
            if denom < 1e-30 {
                continue;
            }
            let mut partial = 0.0;
            for i in 0..n {
                partial += w[i] * z.get(i, j) * residual[i];
            }
            partial = partial / sw + moments[j] * beta[j];
            let updated = soft_threshold(partial, l1) / denom;
            let step = updated - beta[j];
            if step != 0.0 {
                for (i, r) in residual.iter_mut().enumerate() {
                    *r -= z.get(i, j) * step;
                }
                beta[j] = updated;
                max_step = max_step.max(step.abs());
            }
        }
        if max_step < CD_TOL {
            break;
        }
    }
    beta
}

fn soft_threshold(value: f64, threshold: f64) -> f64 {
    if value > threshold {
        value - threshold
    } else if value < -threshold {
        value + threshold
    } else {
        0.0
    }
}
