//! The shared evaluation context: metric-side nuisance predictions and the
//! opposite-arm matching index, precomputed once per validation split.

use crate::datagen::ObservationalDataset;
use crate::learners::{joint_arm_predictions, CateEstimatorKind, NuisanceSet};
use crate::models::{PropensityModel, RegressorModel, RegressorSpec, SelectionBudget};
use crate::numerics::{standardize, Matrix, RngStream};

use super::{PolicyDirection, ScoresError};

/// Everything the observational metrics read: the validation split's
/// outcomes and treatments, the metric-side nuisance predictions on that
/// split, and each row's nearest opposite-arm neighbour.
///
/// The nuisance models behind these vectors are fit on the training split
/// only and are deliberately separate from any estimator's own nuisances,
/// so a metric never scores an estimator with the estimator's own models.
#[derive(Debug, Clone)]
pub struct MetricContext {
    w: Vec<bool>,
    w_f: Vec<f64>,
    y: Vec<f64>,
    /// Treatment probabilities on the validation rows.
    pi: Vec<f64>,
    /// Per-arm outcome-model predictions.
    mu0: Vec<f64>,
    mu1: Vec<f64>,
    /// Joint outcome-model plug-ins at w = 0 and w = 1.
    s0: Vec<f64>,
    s1: Vec<f64>,
    /// Predictions of the outcome model that ignores treatment.
    g: Vec<f64>,
    /// Index of each row's nearest neighbour in the opposite arm.
    matched: Vec<usize>,
    policy: PolicyDirection,
}

impl MetricContext {
    /// Cross-validates the five metric nuisances on the training split and
    /// precomputes their predictions on the validation split.
    pub fn fit(
        train: &ObservationalDataset,
        val: &ObservationalDataset,
        candidates: &[RegressorSpec],
        budget: &SelectionBudget,
        epsilon: f64,
        policy: PolicyDirection,
        rng: &RngStream,
    ) -> Result<Self, ScoresError> {
        let nuis = NuisanceSet::fit(
            train,
            &CateEstimatorKind::ALL,
            candidates,
            budget,
            epsilon,
            rng,
        )?;
        Self::from_models(
            val,
            nuis.mu_xw().expect("fit over all kinds includes mu_xw"),
            nuis.mu0().expect("fit over all kinds includes mu0"),
            nuis.mu1().expect("fit over all kinds includes mu1"),
            nuis.m_x().expect("fit over all kinds includes m_x"),
            nuis.pi().expect("fit over all kinds includes pi"),
            policy,
        )
    }

    /// Builds the context from already-fitted nuisance models.
    pub fn from_models(
        val: &ObservationalDataset,
        mu_xw: &RegressorModel,
        mu0: &RegressorModel,
        mu1: &RegressorModel,
        g: &RegressorModel,
        pi: &PropensityModel,
        policy: PolicyDirection,
    ) -> Result<Self, ScoresError> {
        let (s0, s1) = joint_arm_predictions(mu_xw, val.x())?;
        Self::from_values(
            val,
            pi.predict_proba(val.x())?,
            mu0.predict(val.x())?,
            mu1.predict(val.x())?,
            s0,
            s1,
            g.predict(val.x())?,
            policy,
        )
    }

    /// Builds the context from raw nuisance predictions, for callers whose
    /// nuisance values come from outside this crate.
    #[allow(clippy::too_many_arguments)]
    pub fn from_values(
        val: &ObservationalDataset,
        pi: Vec<f64>,
        mu0: Vec<f64>,
        mu1: Vec<f64>,
        s0: Vec<f64>,
        s1: Vec<f64>,
        g: Vec<f64>,
        policy: PolicyDirection,
    ) -> Result<Self, ScoresError> {
        let n = val.n();
        for (name, values) in [
            ("pi", &pi),
            ("mu0", &mu0),
            ("mu1", &mu1),
            ("s0", &s0),
            ("s1", &s1),
            ("g", &g),
        ] {
            if values.len() != n {
                return Err(ScoresError::LengthMismatch {
                    context: "metric context nuisance values",
                    expected: n,
                    found: values.len(),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(ScoresError::BadValues {
                    reason: format!("{name} contains a non-finite value"),
                });
            }
        }
        for (i, &p) in pi.iter().enumerate() {
            if !(p > 0.0 && p < 1.0) {
                return Err(ScoresError::BadValues {
                    reason: format!("propensity {p} at row {i} is outside (0, 1)"),
                });
            }
        }
        let matched = opposite_arm_neighbours(val.x(), val.w())?;
        Ok(Self {
            w: val.w().to_vec(),
            w_f: val.w_f64(),
            y: val.y().to_vec(),
            pi,
            mu0,
            mu1,
            s0,
            s1,
            g,
            matched,
            policy,
        })
    }

    pub fn n_val(&self) -> usize {
        self.y.len()
    }

    pub fn w(&self) -> &[bool] {
        &self.w
    }

    pub(super) fn w_f(&self) -> &[f64] {
        &self.w_f
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    pub fn mu1(&self) -> &[f64] {
        &self.mu1
    }

    pub fn s0(&self) -> &[f64] {
        &self.s0
    }

    pub fn s1(&self) -> &[f64] {
        &self.s1
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn matched(&self) -> &[usize] {
        &self.matched
    }

    pub fn policy(&self) -> PolicyDirection {
        self.policy
    }
}

/// For every row, the index of its Euclidean nearest neighbour among rows
/// of the opposite treatment arm, on standardized covariates. Distance ties
/// keep the lowest index.
fn opposite_arm_neighbours(x: &Matrix, w: &[bool]) -> Result<Vec<usize>, ScoresError> {
    let z = standardize(x)?.data;
    let rows: Vec<&[f64]> = z.iter_rows().collect();
    let mut matched = Vec::with_capacity(rows.len());
    for i in 0..rows.len() {
        let mut best: Option<(f64, usize)> = None;
        for j in 0..rows.len() {
            if w[j] == w[i] {
                continue;
            }
            let dist: f64 = rows[i]
                .iter()
                .zip(rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if best.is_none_or(|(d, _)| dist < d) {
                best = Some((dist, j));
            }
        }
        match best {
            Some((_, j)) => matched.push(j),
            // Unreachable for a validated dataset, which always carries
            // both arms.
            None => {
                return Err(ScoresError::BadValues {
                    reason: "validation split has a single treatment arm".into(),
                })
            }
        }
    }
    Ok(matched)
}
