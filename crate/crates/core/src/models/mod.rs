//! Regression and propensity models with cross-validated selection.
//!
//! Ten regressor families cover the bank used throughout the benchmark:
//! plain and polynomial least squares, ridge, kernel ridge with linear, RBF
//! and sigmoid kernels, lasso, elastic net, and the three tree ensembles.
//! All fits accept optional non-negative sample weights, and all are
//! deterministic given the [`RegressorSpec`], the data, and an [`RngStream`] for
//! bootstrap subsampling.

mod kernel;
mod linear;
mod logistic;
mod select;
mod tree;

pub use logistic::{fit_propensity, PropensityFamily, PropensityModel};
pub use select::{select_by_cv, select_propensity_by_cv, SelectionBudget};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{log_grid, solve_spd, Matrix, NumericsError, RngStream};

/// Trees per ensemble unless a [`RegressorSpec`] overrides it.
pub const DEFAULT_TREES: u32 = 100;

/// Shrinkage for gradient boosting unless a [`RegressorSpec`] overrides it.
pub const DEFAULT_LEARNING_RATE: f64 = 0.1;

/// Probability clip applied to propensity predictions.
pub const DEFAULT_PROPENSITY_EPSILON: f64 = 0.01;

/// Errors from model fitting, prediction, and selection.
#[derive(Debug, Error)]
pub enum ModelsError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),

    #[error("invalid regressor spec: {reason}")]
    BadSpec { reason: String },

    #[error("{context}: length {found} does not match {expected} rows")]
    LengthMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{context}: encountered a non-finite value")]
    NonFinite { context: &'static str },

    #[error("weights must be finite and non-negative")]
    BadWeights,

    #[error("need at least {min} rows with positive weight, got {found}")]
    TooFewEffectiveRows { min: usize, found: usize },

    #[error("treatment column must contain both classes")]
    SingleClass,

    #[error("epsilon must lie in (0, 0.5), got {value}")]
    BadEpsilon { value: f64 },

    #[error("probability must lie in [0, 1], got {value}")]
    BadProbability { value: f64 },

    #[error("predict: model expects {expected} features, got {found}")]
    FeatureMismatch { expected: usize, found: usize },

    #[error("model produced a non-finite prediction")]
    NonFinitePrediction,

    #[error("no candidate specs to select from")]
    NoCandidates,

    #[error("every candidate failed cross-validation; last error: {last}")]
    AllCandidatesFailed { last: String },

    #[error("invalid selection budget: {reason}")]
    BadBudget { reason: String },

    #[error("linear system could not be stabilized")]
    Unstable,
}

// ─────────────────────────── specs ───────────────────────────

/// Regressor families available to the bank and to nuisance selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorFamily {
    /// Ordinary least squares on the raw covariates.
    Linear,
    /// Least squares on covariates plus their squares.
    Poly2,
    /// Least squares on covariates, squares, and pairwise products.
    Poly2Interaction,
    Ridge,
    KernelRidge,
    Lasso,
    ElasticNet,
    DecisionTree,
    RandomForest,
    GradientBoosting,
}

impl RegressorFamily {
    pub fn label(&self) -> &'static str {
        match self {
            RegressorFamily::Linear => "linear",
            RegressorFamily::Poly2 => "poly2",
            RegressorFamily::Poly2Interaction => "poly2_int",
            RegressorFamily::Ridge => "ridge",
            RegressorFamily::KernelRidge => "kernel_ridge",
            RegressorFamily::Lasso => "lasso",
            RegressorFamily::ElasticNet => "elastic_net",
            RegressorFamily::DecisionTree => "tree",
            RegressorFamily::RandomForest => "forest",
            RegressorFamily::GradientBoosting => "gbt",
        }
    }
}

/// Depth limit for tree-based models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TreeDepth {
    Bounded(u32),
    Unbounded,
}

impl TreeDepth {
    fn label(&self) -> String {
        match self {
            TreeDepth::Bounded(d) => d.to_string(),
            TreeDepth::Unbounded => "none".into(),
        }
    }
}

/// Kernel for kernel ridge regression, applied to standardized features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Linear,
    Rbf,
    Sigmoid,
}

impl KernelKind {
    pub fn label(&self) -> &'static str {
        match self {
            KernelKind::Linear => "linear",
            KernelKind::Rbf => "rbf",
            KernelKind::Sigmoid => "sigmoid",
        }
    }
}

/// A regressor family plus the hyperparameters that family understands.
///
/// Use the constructors; `validate` rejects missing or extraneous
/// hyperparameters for the family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorSpec {
    pub family: RegressorFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l1_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<TreeDepth>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_trees: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
}

impl RegressorSpec {
    fn bare(family: RegressorFamily) -> Self {
        Self {
            family,
            alpha: None,
            l1_ratio: None,
            kernel: None,
            bandwidth: None,
            max_depth: None,
            n_trees: None,
            learning_rate: None,
        }
    }

    pub fn linear() -> Self {
        Self::bare(RegressorFamily::Linear)
    }

    pub fn poly2() -> Self {
        Self::bare(RegressorFamily::Poly2)
    }

    pub fn poly2_interaction() -> Self {
        Self::bare(RegressorFamily::Poly2Interaction)
    }

    pub fn ridge(alpha: f64) -> Self {
        Self {
            alpha: Some(alpha),
            ..Self::bare(RegressorFamily::Ridge)
        }
    }

    pub fn kernel_ridge(kernel: KernelKind, alpha: f64) -> Self {
        Self {
            alpha: Some(alpha),
            kernel: Some(kernel),
            ..Self::bare(RegressorFamily::KernelRidge)
        }
    }

    pub fn lasso(alpha: f64) -> Self {
        Self {
            alpha: Some(alpha),
            ..Self::bare(RegressorFamily::Lasso)
        }
    }

    pub fn elastic_net(alpha: f64, l1_ratio: f64) -> Self {
        Self {
            alpha: Some(alpha),
            l1_ratio: Some(l1_ratio),
            ..Self::bare(RegressorFamily::ElasticNet)
        }
    }

    pub fn tree(depth: TreeDepth) -> Self {
        Self {
            max_depth: Some(depth),
            ..Self::bare(RegressorFamily::DecisionTree)
        }
    }

    pub fn forest(depth: TreeDepth) -> Self {
        Self {
            max_depth: Some(depth),
            ..Self::bare(RegressorFamily::RandomForest)
        }
    }

    pub fn boosting(depth: TreeDepth) -> Self {
        Self {
            max_depth: Some(depth),
            ..Self::bare(RegressorFamily::GradientBoosting)
        }
    }

    pub fn validate(&self) -> Result<(), ModelsError> {
        let bad = |reason: String| Err(ModelsError::BadSpec { reason });
        let family = self.family.label();
        let penalized = matches!(
            self.family,
            RegressorFamily::Ridge
                | RegressorFamily::KernelRidge
                | RegressorFamily::Lasso
                | RegressorFamily::ElasticNet
        );
        let tree_based = matches!(
            self.family,
            RegressorFamily::DecisionTree
                | RegressorFamily::RandomForest
                | RegressorFamily::GradientBoosting
        );

        match self.alpha {
            Some(a) if !penalized => return bad(format!("{family} takes no alpha, got {a}")),
            Some(a) if !(a.is_finite() && a > 0.0) => {
                return bad(format!("{family} needs alpha > 0, got {a}"))
            }
            None if penalized => return bad(format!("{family} requires alpha")),
            _ => {}
        }
        match self.l1_ratio {
            Some(r) if self.family != RegressorFamily::ElasticNet => {
                return bad(format!("{family} takes no l1_ratio, got {r}"))
            }
            Some(r) if !(r.is_finite() && (0.0..=1.0).contains(&r)) => {
                return bad(format!("l1_ratio must lie in [0, 1], got {r}"))
            }
            None if self.family == RegressorFamily::ElasticNet => {
                return bad("elastic_net requires l1_ratio".into())
            }
            _ => {}
        }
        if self.kernel.is_some() != (self.family == RegressorFamily::KernelRidge) {
            return bad(format!("kernel must be set for kernel_ridge only, family is {family}"));
        }
        match self.bandwidth {
            Some(b) if self.family != RegressorFamily::KernelRidge => {
                return bad(format!("{family} takes no bandwidth, got {b}"))
            }
            Some(b) if !(b.is_finite() && b > 0.0) => {
                return bad(format!("bandwidth must be positive, got {b}"))
            }
            _ => {}
        }
        if self.max_depth.is_some() != tree_based {
            return bad(format!("max_depth must be set for tree families only, family is {family}"));
        }
        if let Some(TreeDepth::Bounded(0)) = self.max_depth {
            return bad("max_depth of 0 makes no splits".into());
        }
        match self.n_trees {
            Some(t) if !tree_based || self.family == RegressorFamily::DecisionTree => {
                return bad(format!("{family} takes no n_trees, got {t}"))
            }
            Some(0) => return bad("n_trees must be at least 1".into()),
            _ => {}
        }
        match self.learning_rate {
            Some(lr) if self.family != RegressorFamily::GradientBoosting => {
                return bad(format!("{family} takes no learning_rate, got {lr}"))
            }
            Some(lr) if !(lr.is_finite() && lr > 0.0) => {
                return bad(format!("learning_rate must be positive, got {lr}"))
            }
            _ => {}
        }
        Ok(())
    }

    /// Family part of an estimator label.
    pub fn family_label(&self) -> &'static str {
        self.family.label()
    }

    /// Hyperparameter part of an estimator label, `-` when the family has
    /// none. Deterministic, so labels are stable across runs.
    pub fn hyper_label(&self) -> String {
        let mut parts: Vec<String> = Vec::new();
        if let Some(k) = self.kernel {
            parts.push(format!("k={}", k.label()));
        }
        if let Some(a) = self.alpha {
            parts.push(format!("a={a:e}"));
        }
        if let Some(r) = self.l1_ratio {
            parts.push(format!("l1={r}"));
        }
        if let Some(b) = self.bandwidth {
            parts.push(format!("b={b}"));
        }
        if let Some(d) = self.max_depth {
            parts.push(format!("d={}", d.label()));
        }
        if let Some(t) = self.n_trees {
            parts.push(format!("t={t}"));
        }
        if let Some(lr) = self.learning_rate {
            parts.push(format!("lr={lr}"));
        }
        if parts.is_empty() {
            "-".into()
        } else {
            // Semicolons keep a full estimator label a single CSV field.
            parts.join(";")
        }
    }
}

// ─────────────────────────── fitted models ───────────────────────────

/// A fitted regressor of any family.
#[derive(Debug, Clone)]
pub struct RegressorModel {
    spec: RegressorSpec,
    input_dim: usize,
    inner: Fitted,
}

#[derive(Debug, Clone)]
enum Fitted {
    Linear(linear::LinearModel),
    Kernel(kernel::KernelRidgeModel),
    Tree(tree::TreeModel),
    Forest(tree::ForestModel),
    Boosting(tree::BoostingModel),
}

impl RegressorModel {
    pub fn spec(&self) -> &RegressorSpec {
        &self.spec
    }

    /// Feature count the model was trained on.
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Predictions for each row of `x`. Guaranteed finite.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>, ModelsError> {
        if x.cols() != self.input_dim {
            return Err(ModelsError::FeatureMismatch {
                expected: self.input_dim,
                found: x.cols(),
            });
        }
        let preds = match &self.inner {
            Fitted::Linear(m) => m.predict(x),
            Fitted::Kernel(m) => m.predict(x),
            Fitted::Tree(m) => m.predict(x),
            Fitted::Forest(m) => m.predict(x),
            Fitted::Boosting(m) => m.predict(x),
        };
        if preds.iter().any(|v| !v.is_finite()) {
            return Err(ModelsError::NonFinitePrediction);
        }
        Ok(preds)
    }
}

/// Fits `spec` to `(x, y)` with optional non-negative sample weights.
///
/// Rows with zero weight are dropped before fitting, so a zero-weight row
/// behaves exactly like a removed row for every family. `rng` feeds bootstrap
/// subsampling in random forests; the other families are fully closed-form
/// or deterministic and ignore it.
pub fn fit_regressor(
    spec: &RegressorSpec,
    x: &Matrix,
    y: &[f64],
    weights: Option<&[f64]>,
    rng: &RngStream,
) -> Result<RegressorModel, ModelsError> {
    spec.validate()?;
    let (x, y, w) = effective_rows(x, y, weights)?;

    let inner = match spec.family {
        RegressorFamily::Linear
        | RegressorFamily::Poly2
        | RegressorFamily::Poly2Interaction
        | RegressorFamily::Ridge
        | RegressorFamily::Lasso
        | RegressorFamily::ElasticNet => Fitted::Linear(linear::fit(spec, &x, &y, &w)?),
        RegressorFamily::KernelRidge => Fitted::Kernel(kernel::fit(spec, &x, &y, &w)?),
        RegressorFamily::DecisionTree => Fitted::Tree(tree::fit_single(spec, &x, &y, &w)?),
        RegressorFamily::RandomForest => Fitted::Forest(tree::fit_forest(spec, &x, &y, &w, rng)?),
        RegressorFamily::GradientBoosting => Fitted::Boosting(tree::fit_boosting(spec, &x, &y, &w)?),
    };
    Ok(RegressorModel {
        spec: spec.clone(),
        input_dim: x.cols(),
        inner,
    })
}

/// Validates lengths, weights, and finiteness, then drops zero-weight rows.
fn effective_rows(
    x: &Matrix,
    y: &[f64],
    weights: Option<&[f64]>,
) -> Result<(Matrix, Vec<f64>, Vec<f64>), ModelsError> {
    let n = x.rows();
    if y.len() != n {
        return Err(ModelsError::LengthMismatch {
            context: "fit targets",
            expected: n,
            found: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(ModelsError::NonFinite {
            context: "fit targets",
        });
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(ModelsError::LengthMismatch {
                context: "fit weights",
                expected: n,
                found: w.len(),
            });
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ModelsError::BadWeights);
        }
        let keep: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
        if keep.len() < 2 {
            return Err(ModelsError::TooFewEffectiveRows {
                min: 2,
                found: keep.len(),
            });
        }
        Ok((
            x.select_rows(&keep),
            keep.iter().map(|&i| y[i]).collect(),
            keep.iter().map(|&i| w[i]).collect(),
        ))
    } else {
        if n < 2 {
            return Err(ModelsError::TooFewEffectiveRows { min: 2, found: n });
        }
        Ok((x.clone(), y.to_vec(), vec![1.0; n]))
    }
}

/// Solves a symmetric system, adding an escalating ridge to the diagonal
/// when the plain factorization reports a non-positive pivot. Singular
/// normal equations (collinear features, sigmoid kernels) then resolve to
/// the minimum-jitter solution instead of failing; the escalation sequence
/// is fixed, so results stay deterministic.
pub(crate) fn solve_spd_stabilized(
    gram: &Matrix,
    rhs: &[f64],
) -> Result<Vec<f64>, ModelsError> {
    match solve_spd(gram, rhs) {
        Ok(solution) => return Ok(solution),
        Err(NumericsError::NotPositiveDefinite { .. }) => {}
        Err(other) => return Err(other.into()),
    }
    let p = gram.rows();
    let trace_mean = (0..p).map(|j| gram.get(j, j)).sum::<f64>() / p.max(1) as f64;
    let scale = if trace_mean > 0.0 { trace_mean } else { 1.0 };
    let mut jitter = scale * 1e-10;
    for _ in 0..8 {
        let mut data = gram.data().to_vec();
        for j in 0..p {
            data[j * p + j] += jitter;
        }
        let bumped = Matrix::from_vec(p, p, data)?;
        match solve_spd(&bumped, rhs) {
            Ok(solution) => return Ok(solution),
            Err(NumericsError::NotPositiveDefinite { .. }) => jitter *= 100.0,
            Err(other) => return Err(other.into()),
        }
    }
    Err(ModelsError::Unstable)
}

// ─────────────────────────── the model bank ───────────────────────────

/// Specs for the final-stage model bank.
///
/// Three plain least-squares variants have no hyperparameters; ten gridded
/// slots contribute `grid_size` specs each, so the bank holds
/// `3 + 10 * grid_size` distinct members. Penalty strengths follow a decade
/// grid from `1e-4` up to `1e5`; tree depths run 2 through 10 and then
/// unlimited.
pub fn final_model_bank(grid_size: usize) -> Result<Vec<RegressorSpec>, ModelsError> {
    if grid_size == 0 {
        return Err(ModelsError::BadSpec {
            reason: "grid_size must be at least 1".into(),
        });
    }
    let alphas = log_grid(-4.0, 5.0, grid_size)?;
    let depths = depth_grid(grid_size);

    let mut bank = vec![
        RegressorSpec::linear(),
        RegressorSpec::poly2(),
        RegressorSpec::poly2_interaction(),
    ];
    for &a in &alphas {
        bank.push(RegressorSpec::ridge(a));
    }
    for &a in &alphas {
        bank.push(RegressorSpec::kernel_ridge(KernelKind::Linear, a));
    }
    for &a in &alphas {
        bank.push(RegressorSpec::lasso(a));
    }
    for &a in &alphas {
        bank.push(RegressorSpec::elastic_net(a, 0.5));
    }
    for &a in &alphas {
        bank.push(RegressorSpec::kernel_ridge(KernelKind::Sigmoid, a));
    }
    for &a in &alphas {
        bank.push(RegressorSpec::kernel_ridge(KernelKind::Rbf, a));
    }
    for &a in &alphas {
        bank.push(RegressorSpec::elastic_net(a, 0.1));
    }
    for &d in &depths {
        bank.push(RegressorSpec::tree(d));
    }
    for &d in &depths {
        bank.push(RegressorSpec::forest(d));
    }
    for &d in &depths {
        bank.push(RegressorSpec::boosting(d));
    }
    Ok(bank)
}

/// First `count` entries of the depth ladder 2..=10, unlimited, 11, 12, ...
fn depth_grid(count: usize) -> Vec<TreeDepth> {
    (0..count)
        .map(|i| match i {
            0..=8 => TreeDepth::Bounded(i as u32 + 2),
            9 => TreeDepth::Unbounded,
            _ => TreeDepth::Bounded(i as u32 + 1),
        })
        .collect()
}

/// Candidate list for nuisance-model selection: a spread of linear,
/// penalized, and tree-based specs that keeps cross-validation affordable.
pub fn default_nuisance_candidates() -> Vec<RegressorSpec> {
    vec![
        RegressorSpec::linear(),
        RegressorSpec::poly2(),
        RegressorSpec::poly2_interaction(),
        RegressorSpec::ridge(0.1),
        RegressorSpec::ridge(10.0),
        RegressorSpec::lasso(0.01),
        RegressorSpec::tree(TreeDepth::Bounded(3)),
        RegressorSpec::tree(TreeDepth::Bounded(6)),
        RegressorSpec::forest(TreeDepth::Unbounded),
        RegressorSpec::boosting(TreeDepth::Bounded(3)),
    ]
}
