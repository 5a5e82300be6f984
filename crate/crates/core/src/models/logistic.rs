//! Propensity models: probability of treatment given covariates.
//!
//! Two families are available. The linear one is a logistic regression fit
//! by damped Newton steps from the constant-rate starting point, so its
//! in-sample log-loss can only improve on the constant predictor. The
//! boosted one grows shallow trees on the logistic gradient with Newton
//! leaf values and stops early if a round stops helping, which preserves the
//! same guarantee. Predicted probabilities are always clipped to
//! `[epsilon, 1 - epsilon]`.

use serde::{Deserialize, Serialize};

use crate::numerics::Matrix;

use super::kernel::dot;

use super::linear::WeightedScaler;
use super::tree::fit_tree;
use super::{solve_spd_stabilized, ModelsError, DEFAULT_LEARNING_RATE, DEFAULT_TREES};

/// Depth of the gradient-boosted classifier's trees.
const BOOSTED_DEPTH: u32 = 3;

/// Ridge on logistic slopes, for stability under separable data.
const LOGISTIC_RIDGE: f64 = 1e-8;

const NEWTON_ITERATIONS: usize = 50;
const MAX_HALVINGS: usize = 40;

/// Propensity model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityFamily {
    Logistic,
    GradientBoosting,
}

impl PropensityFamily {
    pub fn label(&self) -> &'static str {
        match self {
            PropensityFamily::Logistic => "logistic",
            PropensityFamily::GradientBoosting => "gbt",
        }
    }
}

/// A fitted propensity model.
#[derive(Debug, Clone)]
pub struct PropensityModel {
    epsilon: f64,
    input_dim: usize,
    inner: FittedPropensity,
}

#[derive(Debug, Clone)]
enum FittedPropensity {
    Logistic {
        scaler: WeightedScaler,
        intercept: f64,
        coefs: Vec<f64>,
    },
    Boosted {
        intercept: f64,
        learning_rate: f64,
        trees: Vec<super::tree::TreeModel>,
    },
    Known(f64),
}

impl PropensityModel {
    /// A model that assigns the same treatment probability to every row,
    /// for data whose assignment mechanism is known (randomized
    /// experiments).
    pub fn constant(p: f64, input_dim: usize, epsilon: f64) -> Result<Self, ModelsError> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(ModelsError::BadEpsilon { value: epsilon });
        }
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(ModelsError::BadProbability { value: p });
        }
        Ok(Self {
            epsilon,
            input_dim,
            inner: FittedPropensity::Known(p),
        })
    }

    /// The fitted family, or `None` for a known-constant model.
    pub fn family(&self) -> Option<PropensityFamily> {
        match &self.inner {
            FittedPropensity::Logistic { .. } => Some(PropensityFamily::Logistic),
            FittedPropensity::Boosted { .. } => Some(PropensityFamily::GradientBoosting),
            FittedPropensity::Known(_) => None,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Treatment probabilities, clipped to `[epsilon, 1 - epsilon]`.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>, ModelsError> {
        if x.cols() != self.input_dim {
            return Err(ModelsError::FeatureMismatch {
                expected: self.input_dim,
                found: x.cols(),
            });
        }
        let probs: Vec<f64> = match &self.inner {
            FittedPropensity::Logistic {
                scaler,
                intercept,
                coefs,
            } => {
                let z = scaler.transform(x);
                z.iter_rows()
                    .map(|row| sigmoid(intercept + dot(row, coefs)))
                    .collect()
            }
            FittedPropensity::Boosted {
                intercept,
                learning_rate,
                trees,
            } => x
                .iter_rows()
                .map(|row| {
                    sigmoid(
                        intercept
                            + learning_rate * trees.iter().map(|t| t.predict_row(row)).sum::<f64>(),
                    )
                })
                .collect(),
            FittedPropensity::Known(p) => vec![*p; x.rows()],
        };
        Ok(probs
            .iter()
            .map(|&p| p.clamp(self.epsilon, 1.0 - self.epsilon))
            .collect())
    }
}

/// Fits a propensity model for binary treatment `w`.
///
/// Errors when `w` has a single class, lengths do not match, or `epsilon`
/// is outside `(0, 0.5)`.
pub fn fit_propensity(
    x: &Matrix,
    w: &[bool],
    family: PropensityFamily,
    epsilon: f64,
) -> Result<PropensityModel, ModelsError> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(ModelsError::BadEpsilon { value: epsilon });
    }
    if w.len() != x.rows() {
        return Err(ModelsError::LengthMismatch {
            context: "propensity treatment",
            expected: x.rows(),
            found: w.len(),
        });
    }
    if w.iter().all(|&t| t) || w.iter().all(|&t| !t) {
        return Err(ModelsError::SingleClass);
    }
    let targets: Vec<f64> = w.iter().map(|&t| f64::from(u8::from(t))).collect();
    let inner = match family {
        PropensityFamily::Logistic => fit_logistic(x, &targets),
        PropensityFamily::GradientBoosting => fit_boosted(x, &targets),
    }?;
    Ok(PropensityModel {
        epsilon,
        input_dim: x.cols(),
        inner,
    })
}

fn fit_logistic(x: &Matrix, t: &[f64]) -> Result<FittedPropensity, ModelsError> {
    let n = x.rows();
    let ones = vec![1.0; n];
    let scaler = WeightedScaler::fit(x, &ones);
    let z = scaler.transform(x);
    let d = z.cols();

    let rate = t.iter().sum::<f64>() / n as f64;
    // Starting at the constant-rate predictor, with slopes at zero, makes
    // the initial objective exactly the constant predictor's log-loss.
    let mut intercept = logit(rate);
    let mut coefs = vec![0.0; d];

    let objective = |intercept: f64, coefs: &[f64]| -> f64 {
        let mut loss = 0.0;
        for (row, &ti) in z.iter_rows().zip(t) {
            let eta = intercept + dot(row, coefs);
            loss += log1p_exp(eta) - ti * eta;
        }
        loss + 0.5 * LOGISTIC_RIDGE * coefs.iter().map(|c| c * c).sum::<f64>()
    };
    let mut current = objective(intercept, &coefs);

    for _ in 0..NEWTON_ITERATIONS {
        // Gradient and Hessian over [intercept, coefs].
        let mut grad = vec![0.0; d + 1];
        let mut hess = vec![0.0; (d + 1) * (d + 1)];
        for (row, &ti) in z.iter_rows().zip(t) {
            let eta = intercept + dot(row, &coefs);
            let p = sigmoid(eta);
            let s = (p * (1.0 - p)).max(1e-10);
            let err = p - ti;
            grad[0] += err;
            hess[0] += s;
            for j in 0..d {
                grad[j + 1] += err * row[j];
                hess[j + 1] += s * row[j];
                hess[(j + 1) * (d + 1)] += s * row[j];
                for k in j..d {
                    hess[(j + 1) * (d + 1) + (k + 1)] += s * row[j] * row[k];
                }
            }
        }
        for j in 0..d {
            grad[j + 1] += LOGISTIC_RIDGE * coefs[j];
            hess[(j + 1) * (d + 1) + (j + 1)] += LOGISTIC_RIDGE;
            for k in (j + 1)..d {
                hess[(k + 1) * (d + 1) + (j + 1)] = hess[(j + 1) * (d + 1) + (k + 1)];
            }
        }
        let grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_norm <= 1e-10 * (1.0 + n as f64) {
            break;
        }

        let step = solve_spd_stabilized(&Matrix::from_vec(d + 1, d + 1, hess)?, &grad)?;
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..MAX_HALVINGS {
            let try_intercept = intercept - scale * step[0];
            let try_coefs: Vec<f64> = coefs
                .iter()
                .zip(&step[1..])
                .map(|(c, s)| c - scale * s)
                .collect();
            let value = objective(try_intercept, &try_coefs);
            if value <= current {
                intercept = try_intercept;
                coefs = try_coefs;
                current = value;
                improved = true;
                break;
            }
            scale /= 2.0;
        }
        if !improved {
            break;
        }
    }
    Ok(FittedPropensity::Logistic {
        scaler,
        intercept,
        coefs,
    })
}

fn fit_boosted(x: &Matrix, t: &[f64]) -> Result<FittedPropensity, ModelsError> {
    let n = x.rows();
    let rate = t.iter().sum::<f64>() / n as f64;
    let intercept = logit(rate);
    let learning_rate = DEFAULT_LEARNING_RATE;
    let weights = vec![1.0; n];

    let log_loss = |scores: &[f64]| -> f64 {
        scores
            .iter()
            .zip(t)
            .map(|(&eta, &ti)| log1p_exp(eta) - ti * eta)
            .sum::<f64>()
            / n as f64
    };

    let mut scores = vec![intercept; n];
    let mut current = log_loss(&scores);
    let mut trees = Vec::new();
    for _ in 0..DEFAULT_TREES {
        let gradient: Vec<f64> = scores
            .iter()
            .zip(t)
            .map(|(&eta, &ti)| ti - sigmoid(eta))
            .collect();
        let mut tree = fit_tree(x, &gradient, &weights, Some(BOOSTED_DEPTH));

        // Newton leaf values: sum of gradients over sum of Hessians.
        let mut numer: std::collections::BTreeMap<usize, f64> = Default::default();
        let mut denom: std::collections::BTreeMap<usize, f64> = Default::default();
        for (i, row) in x.iter_rows().enumerate() {
            let leaf = tree.leaf_of(row);
            let p = sigmoid(scores[i]);
            *numer.entry(leaf).or_default() += t[i] - p;
            *denom.entry(leaf).or_default() += (p * (1.0 - p)).max(1e-10);
        }
        for (leaf, num) in &numer {
            tree.set_leaf_value(*leaf, num / denom[leaf]);
        }

        let proposed: Vec<f64> = scores
            .iter()
            .zip(x.iter_rows())
            .map(|(&eta, row)| eta + learning_rate * tree.predict_row(row))
            .collect();
        let value = log_loss(&proposed);
        if value > current {
            break;
        }
        scores = proposed;
        current = value;
        trees.push(tree);
    }
    Ok(FittedPropensity::Boosted {
        intercept,
        learning_rate,
        trees,
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + exp(z))` without overflow.
fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean log-loss of clipped probabilities against binary labels.
pub(super) fn mean_log_loss(probs: &[f64], w: &[bool]) -> f64 {
    probs
        .iter()
        .zip(w)
        .map(|(&p, &t)| if t { -p.ln() } else { -(1.0 - p).ln() })
        .sum::<f64>()
        / probs.len() as f64
}
