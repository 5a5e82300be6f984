//! Kernel ridge regression in dual form.
//!
//! Kernels are evaluated on standardized features. Targets are centered and
//! the mean is restored at predict time, which gives the model an intercept
//! without penalizing it. Weighted fits solve the symmetrized system
//! `(W^1/2 K W^1/2 + alpha I) d = W^1/2 y` and recover the dual coefficients
//! as `c = W^1/2 d`. A sigmoid kernel matrix need not be positive
//! semidefinite, so the solve goes through the stabilized path.

use crate::numerics::Matrix;

use super::linear::WeightedScaler;
use super::{solve_spd_stabilized, KernelKind, ModelsError, RegressorSpec};

#[derive(Debug, Clone)]
pub(crate) struct KernelRidgeModel {
    kernel: KernelKind,
    gamma: f64,
    scaler: WeightedScaler,
    train: Matrix,
    dual: Vec<f64>,
    intercept: f64,
}

impl KernelRidgeModel {
    pub(crate) fn predict(&self, x: &Matrix) -> Vec<f64> {
        let z = self.scaler.transform(x);
        z.iter_rows()
            .map(|row| {
                self.intercept
                    + self
                        .train
                        .iter_rows()
                        .zip(&self.dual)
                        .map(|(t, c)| c * eval_kernel(self.kernel, self.gamma, row, t))
                        .sum::<f64>()
            })
            .collect()
    }
}

pub(super) fn fit(
    spec: &RegressorSpec,
    x: &Matrix,
    y: &[f64],
    w: &[f64],
) -> Result<KernelRidgeModel, ModelsError> {
    let kernel = spec.kernel.unwrap();
    let alpha = spec.alpha.unwrap();
    // The usual "scale" heuristic: on standardized features the per-feature
    // variance is one, so the reference gamma is 1/d.
    let gamma = spec.bandwidth.unwrap_or(1.0) / x.cols() as f64;

    let scaler = WeightedScaler::fit(x, w);
    let z = scaler.transform(x);
    let n = z.rows();

    let sw: f64 = w.iter().sum();
    let ybar = y.iter().zip(w).map(|(yi, wi)| yi * wi).sum::<f64>() / sw;

    let sqrt_w: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let mut system = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let k = eval_kernel(kernel, gamma, z.row(i), z.row(j));
            let v = sqrt_w[i] * k * sqrt_w[j];
            system[i * n + j] = v;
            system[j * n + i] = v;
        }
        system[i * n + i] += alpha;
    }
    let rhs: Vec<f64> = (0..n).map(|i| sqrt_w[i] * (y[i] - ybar)).collect();
    let d = solve_spd_stabilized(&Matrix::from_vec(n, n, system)?, &rhs)?;
    let dual: Vec<f64> = d.iter().zip(&sqrt_w).map(|(di, si)| di * si).collect();

    Ok(KernelRidgeModel {
        kernel,
        gamma,
        scaler,
        train: z,
        dual,
        intercept: ybar,
    })
}

fn eval_kernel(kernel: KernelKind, gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    match kernel {
        KernelKind::Linear => dot(a, b),
        KernelKind::Rbf => {
            let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            (-gamma * sq).exp()
        }
        KernelKind::Sigmoid => (gamma * dot(a, b)).tanh(),
    }
}

pub(super) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
