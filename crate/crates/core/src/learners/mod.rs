//! CATE meta-learners.
//!
//! Every learner here composes plain regression and propensity models from
//! [`crate::models`] into an estimator of the conditional average treatment
//! effect. The shared ingredients live in a [`NuisanceSet`]; the learners
//! differ in how they combine those models, and most of them additionally
//! fit a *final* regression model on constructed per-row targets:
//!
//! * **S**: one joint outcome model over (X, W); the effect is the
//!   difference of its two counterfactual plug-ins.
//! * **projected-S**: the S plug-in effect re-regressed on X.
//! * **T**: separate per-arm outcome models.
//! * **X**: per-arm imputed-effect regressions blended by the propensity.
//! * **IPW / DR**: regression on inverse-propensity or doubly robust
//!   pseudo-outcome differences.
//! * **R**: a weighted residual-on-residual regression.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::ObservationalDataset;
use crate::models::{
    select_by_cv, select_propensity_by_cv, ModelsError, PropensityFamily, PropensityModel,
    RegressorModel, RegressorSpec, SelectionBudget,
};
use crate::numerics::{Matrix, NumericsError, RngStream};

mod estimators;
pub(crate) use estimators::joint_arm_predictions;
pub use estimators::{
    build_bank, dr_pseudo, dr_pseudo_from_preds, fit_dr, fit_ipw, fit_projected_s, fit_r, fit_s,
    fit_t, fit_x, ipw_pseudo, BankMember, PseudoOutcomes,
};

#[derive(Debug, Error)]
pub enum LearnersError {
    #[error(transparent)]
    Model(#[from] ModelsError),

    #[error(transparent)]
    Numerics(#[from] NumericsError),

    #[error("estimator needs the `{which}` nuisance model, which was not fitted")]
    MissingNuisance { which: &'static str },

    #[error("the {arm} arm has no rows")]
    EmptyArm { arm: &'static str },

    #[error("{context}: length {found} does not match {expected} rows")]
    LengthMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("propensity value {value} at row {index} is outside (0, 1)")]
    BadPropensity { index: usize, value: f64 },

    #[error("all residual-regression weights are below {floor:e}")]
    DegenerateWeights { floor: f64 },

    #[error("estimator bank contains duplicate label `{label}`")]
    DuplicateLabel { label: String },
}

/// The meta-learner recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CateEstimatorKind {
    S,
    #[serde(rename = "proj-s")]
    ProjectedS,
    T,
    X,
    Ipw,
    Dr,
    R,
}

impl CateEstimatorKind {
    pub const ALL: [CateEstimatorKind; 7] = [
        CateEstimatorKind::S,
        CateEstimatorKind::ProjectedS,
        CateEstimatorKind::T,
        CateEstimatorKind::X,
        CateEstimatorKind::Ipw,
        CateEstimatorKind::Dr,
        CateEstimatorKind::R,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            CateEstimatorKind::S => "s",
            CateEstimatorKind::ProjectedS => "proj-s",
            CateEstimatorKind::T => "t",
            CateEstimatorKind::X => "x",
            CateEstimatorKind::Ipw => "ipw",
            CateEstimatorKind::Dr => "dr",
            CateEstimatorKind::R => "r",
        }
    }

    /// S and T are singletons; every other kind is instantiated once per
    /// final-model spec.
    pub fn uses_final_model(&self) -> bool {
        !matches!(self, CateEstimatorKind::S | CateEstimatorKind::T)
    }
}

/// The fitted models shared by the learners: a joint outcome model
/// `mu_xw(x, w)`, per-arm outcome models `mu0`/`mu1`, an outcome model
/// `m_x(x)` marginal over treatment, and a propensity model `pi`.
///
/// Only the models some requested estimator kind needs are fitted; asking a
/// learner for a missing one is an error rather than a silent refit.
#[derive(Debug, Clone, Default)]
pub struct NuisanceSet {
    mu_xw: Option<Arc<RegressorModel>>,
    mu0: Option<Arc<RegressorModel>>,
    mu1: Option<Arc<RegressorModel>>,
    m_x: Option<Arc<RegressorModel>>,
    pi: Option<Arc<PropensityModel>>,
}

impl NuisanceSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_mu_xw(mut self, model: RegressorModel) -> Self {
        self.mu_xw = Some(Arc::new(model));
        self
    }

    pub fn with_arms(mut self, mu0: RegressorModel, mu1: RegressorModel) -> Self {
        self.mu0 = Some(Arc::new(mu0));
        self.mu1 = Some(Arc::new(mu1));
        self
    }

    pub fn with_m_x(mut self, model: RegressorModel) -> Self {
        self.m_x = Some(Arc::new(model));
        self
    }

    pub fn with_pi(mut self, model: PropensityModel) -> Self {
        self.pi = Some(Arc::new(model));
        self
    }

    /// Cross-validates and fits exactly the nuisance models the given
    /// estimator kinds require.
    ///
    /// Each nuisance draws from its own child stream (`"mu_xw"`, `"mu0"`,
    /// `"mu1"`, `"m_x"`, `"pi"`), so changing the kind list never perturbs
    /// the models that are fitted either way.
    pub fn fit(
        data: &ObservationalDataset,
        kinds: &[CateEstimatorKind],
        candidates: &[RegressorSpec],
        budget: &SelectionBudget,
        epsilon: f64,
        rng: &RngStream,
    ) -> Result<Self, LearnersError> {
        use CateEstimatorKind::*;
        let mut set = NuisanceSet::default();

        if kinds.iter().any(|k| matches!(k, S | ProjectedS | Dr)) {
            let xw = data.x().with_extra_column(&data.w_f64())?;
            let model = select_by_cv(candidates, &xw, data.y(), budget, &rng.child("mu_xw"))?;
            set.mu_xw = Some(Arc::new(model));
        }
        if kinds.iter().any(|k| matches!(k, T | X)) {
            let (controls, treated) = arm_indices(data.w());
            let x0 = data.x().select_rows(&controls);
            let y0: Vec<f64> = controls.iter().map(|&i| data.y()[i]).collect();
            let x1 = data.x().select_rows(&treated);
            let y1: Vec<f64> = treated.iter().map(|&i| data.y()[i]).collect();
            set.mu0 = Some(Arc::new(select_by_cv(
                candidates,
                &x0,
                &y0,
                budget,
                &rng.child("mu0"),
            )?));
            set.mu1 = Some(Arc::new(select_by_cv(
                candidates,
                &x1,
                &y1,
                budget,
                &rng.child("mu1"),
            )?));
        }
        if kinds.contains(&R) {
            let model = select_by_cv(candidates, data.x(), data.y(), budget, &rng.child("m_x"))?;
            set.m_x = Some(Arc::new(model));
        }
        if kinds.iter().any(|k| matches!(k, X | Ipw | Dr | R)) {
            let model = select_propensity_by_cv(
                &[PropensityFamily::Logistic, PropensityFamily::GradientBoosting],
                data.x(),
                data.w(),
                epsilon,
                budget,
                &rng.child("pi"),
            )?;
            set.pi = Some(Arc::new(model));
        }
        Ok(set)
    }

    pub fn mu_xw(&self) -> Option<&RegressorModel> {
        self.mu_xw.as_deref()
    }

    pub fn mu0(&self) -> Option<&RegressorModel> {
        self.mu0.as_deref()
    }

    pub fn mu1(&self) -> Option<&RegressorModel> {
        self.mu1.as_deref()
    }

    pub fn m_x(&self) -> Option<&RegressorModel> {
        self.m_x.as_deref()
    }

    pub fn pi(&self) -> Option<&PropensityModel> {
        self.pi.as_deref()
    }

    pub(crate) fn require_mu_xw(&self) -> Result<&Arc<RegressorModel>, LearnersError> {
        self.mu_xw
            .as_ref()
            .ok_or(LearnersError::MissingNuisance { which: "mu_xw" })
    }

    pub(crate) fn require_mu0(&self) -> Result<&Arc<RegressorModel>, LearnersError> {
        self.mu0
            .as_ref()
            .ok_or(LearnersError::MissingNuisance { which: "mu0" })
    }

    pub(crate) fn require_mu1(&self) -> Result<&Arc<RegressorModel>, LearnersError> {
        self.mu1
            .as_ref()
            .ok_or(LearnersError::MissingNuisance { which: "mu1" })
    }

    pub(crate) fn require_m_x(&self) -> Result<&Arc<RegressorModel>, LearnersError> {
        self.m_x
            .as_ref()
            .ok_or(LearnersError::MissingNuisance { which: "m_x" })
    }

    pub(crate) fn require_pi(&self) -> Result<&Arc<PropensityModel>, LearnersError> {
        self.pi
            .as_ref()
            .ok_or(LearnersError::MissingNuisance { which: "pi" })
    }
}

pub(crate) fn arm_indices(w: &[bool]) -> (Vec<usize>, Vec<usize>) {
    let mut controls = Vec::new();
    let mut treated = Vec::new();
    for (i, &t) in w.iter().enumerate() {
        if t {
            treated.push(i);
        } else {
            controls.push(i);
        }
    }
    (controls, treated)
}

/// A fitted CATE estimator.
///
/// The label is stable across runs and encodes the recipe and the final
/// model: `<kind>|<family>|<hyperparameters>`, with `-` placeholders for the
/// singleton kinds (`s|-|-`, `t|-|-`).
#[derive(Debug, Clone)]
pub struct CateEstimator {
    kind: CateEstimatorKind,
    label: String,
    inner: FittedCate,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
enum FittedCate {
    S {
        mu_xw: Arc<RegressorModel>,
    },
    T {
        mu0: Arc<RegressorModel>,
        mu1: Arc<RegressorModel>,
    },
    Final {
        model: RegressorModel,
    },
    X {
        f0: RegressorModel,
        f1: RegressorModel,
        pi: Arc<PropensityModel>,
    },
}

impl CateEstimator {
    pub fn kind(&self) -> CateEstimatorKind {
        self.kind
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Predicted treatment effect for each covariate row.
    pub fn predict_cate(&self, x: &Matrix) -> Result<Vec<f64>, LearnersError> {
        match &self.inner {
            FittedCate::S { mu_xw } => {
                let treated = mu_xw.predict(&x.with_extra_column(&vec![1.0; x.rows()])?)?;
                let control = mu_xw.predict(&x.with_extra_column(&vec![0.0; x.rows()])?)?;
                Ok(treated
                    .iter()
                    .zip(&control)
                    .map(|(t, c)| t - c)
                    .collect())
            }
            FittedCate::T { mu0, mu1 } => {
                let m1 = mu1.predict(x)?;
                let m0 = mu0.predict(x)?;
                Ok(m1.iter().zip(&m0).map(|(a, b)| a - b).collect())
            }
            FittedCate::Final { model } => Ok(model.predict(x)?),
            FittedCate::X { f0, f1, pi } => {
                let p1 = pi.predict_proba(x)?;
                let e0 = f0.predict(x)?;
                let e1 = f1.predict(x)?;
                Ok(p1
                    .iter()
                    .zip(e0.iter().zip(&e1))
                    .map(|(&p, (a, b))| (1.0 - p) * a + p * b)
                    .collect())
            }
        }
    }

    #[cfg(test)]
    pub(crate) fn x_parts(&self) -> Option<(&RegressorModel, &RegressorModel)> {
        match &self.inner {
            FittedCate::X { f0, f1, .. } => Some((f0, f1)),
            _ => None,
        }
    }
}

fn singleton_label(kind: CateEstimatorKind) -> String {
    format!("{}|-|-", kind.label())
}

fn final_label(kind: CateEstimatorKind, spec: &RegressorSpec) -> String {
    format!(
        "{}|{}|{}",
        kind.label(),
        spec.family_label(),
        spec.hyper_label()
    )
}
