//! Observational model-selection metrics and the oracle PEHE.
//!
//! Every metric maps an estimator's predicted effects on the validation
//! split to a single number, using only observational quantities plus the
//! metric-side nuisances in a [`MetricContext`]. The oracle PEHE is the one
//! exception: it consumes the true effects and exists to judge the metrics
//! themselves.
//!
//! Metrics that divide by the propensity also come in a *clipped* flavor
//! that first discards validation rows with extreme treatment
//! probabilities.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learners::{dr_pseudo_from_preds, ipw_pseudo, LearnersError};
use crate::models::ModelsError;
use crate::numerics::NumericsError;

mod context;
pub use context::MetricContext;

/// Default propensity-clipping threshold for the `*_clip` metrics.
pub const DEFAULT_CLIP_ALPHA: f64 = 0.1;

/// The two clipping thresholds the benchmark ships with.
pub const CLIP_PRESETS: [f64; 2] = [0.1, 0.01];

#[derive(Debug, Error)]
pub enum ScoresError {
    #[error(transparent)]
    Model(#[from] ModelsError),

    #[error(transparent)]
    Learner(#[from] LearnersError),

    #[error(transparent)]
    Numerics(#[from] NumericsError),

    #[error("{context}: length {found} does not match {expected} rows")]
    LengthMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid metric inputs: {reason}")]
    BadValues { reason: String },

    #[error("clip threshold must lie in (0, 0.5), got {value}")]
    BadAlpha { value: f64 },

    #[error("clip threshold given for `{name}`, which has no clipped variant")]
    AlphaNotApplicable { name: &'static str },

    #[error("every validation row was clipped away at alpha = {alpha}")]
    AllRowsClipped { alpha: f64 },

    #[error("`oracle_pehe` needs true effects; evaluate it with ground truth, not a context")]
    NeedsGroundTruth,

    #[error("metric `{name}` produced a non-finite value")]
    NonFinite { name: &'static str },
}

/// Whether larger or smaller metric values indicate a better estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Minimize,
    Maximize,
}

/// Direction of the decision policy read off an estimator: treat when the
/// predicted effect is positive (the default) or when it is negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyDirection {
    #[default]
    HigherIsBetter,
    LowerIsBetter,
}

impl PolicyDirection {
    fn treat(&self, effect: f64) -> bool {
        match self {
            PolicyDirection::HigherIsBetter => effect > 0.0,
            PolicyDirection::LowerIsBetter => effect < 0.0,
        }
    }
}

/// The metric columns of a benchmark run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Value,
    ValueDr,
    ValueDrClip,
    TauT,
    TauS,
    TauMatch,
    TauIptw,
    TauIptwClip,
    TauDr,
    TauDrClip,
    Influence,
    InfluenceClip,
    RScore,
    OraclePehe,
}

impl MetricName {
    pub const ALL: [MetricName; 14] = [
        MetricName::Value,
        MetricName::ValueDr,
        MetricName::ValueDrClip,
        MetricName::TauT,
        MetricName::TauS,
        MetricName::TauMatch,
        MetricName::TauIptw,
        MetricName::TauIptwClip,
        MetricName::TauDr,
        MetricName::TauDrClip,
        MetricName::Influence,
        MetricName::InfluenceClip,
        MetricName::RScore,
        MetricName::OraclePehe,
    ];

    /// The thirteen metrics computable from observational data alone.
    pub fn observational() -> impl Iterator<Item = MetricName> {
        Self::ALL
            .into_iter()
            .filter(|name| *name != MetricName::OraclePehe)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricName::Value => "value",
            MetricName::ValueDr => "value_dr",
            MetricName::ValueDrClip => "value_dr_clip",
            MetricName::TauT => "tau_t",
            MetricName::TauS => "tau_s",
            MetricName::TauMatch => "tau_match",
            MetricName::TauIptw => "tau_iptw",
            MetricName::TauIptwClip => "tau_iptw_clip",
            MetricName::TauDr => "tau_dr",
            MetricName::TauDrClip => "tau_dr_clip",
            MetricName::Influence => "influence",
            MetricName::InfluenceClip => "influence_clip",
            MetricName::RScore => "r_score",
            MetricName::OraclePehe => "oracle_pehe",
        }
    }

    /// The two policy-value metrics reward high values; everything else is
    /// an error-style quantity to be minimized.
    pub fn orientation(&self) -> Orientation {
        match self {
            MetricName::Value | MetricName::ValueDr | MetricName::ValueDrClip => {
                Orientation::Maximize
            }
            _ => Orientation::Minimize,
        }
    }

    pub fn is_clipped(&self) -> bool {
        matches!(
            self,
            MetricName::ValueDrClip
                | MetricName::TauIptwClip
                | MetricName::TauDrClip
                | MetricName::InfluenceClip
        )
    }
}

/// A metric plus the settings needed to evaluate it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDescriptor {
    pub name: MetricName,
    pub orientation: Orientation,
    /// Present exactly for the `*_clip` metrics.
    pub clip_alpha: Option<f64>,
}

impl MetricDescriptor {
    /// Builds the descriptor for a metric, using `clip_alpha` for its
    /// clipped variant (falling back to [`DEFAULT_CLIP_ALPHA`]). Passing a
    /// threshold for an unclipped metric is an error.
    pub fn new(name: MetricName, clip_alpha: Option<f64>) -> Result<Self, ScoresError> {
        let clip_alpha = match (name.is_clipped(), clip_alpha) {
            (true, Some(alpha)) => {
                check_alpha(alpha)?;
                Some(alpha)
            }
            (true, None) => Some(DEFAULT_CLIP_ALPHA),
            (false, None) => None,
            (false, Some(_)) => {
                return Err(ScoresError::AlphaNotApplicable {
                    name: name.as_str(),
                })
            }
        };
        Ok(Self {
            name,
            orientation: name.orientation(),
            clip_alpha,
        })
    }
}

/// One evaluated metric: the value and how many validation rows survived
/// clipping (all of them for unclipped metrics).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreValue {
    pub metric: MetricName,
    pub value: f64,
    pub n_used: usize,
}

/// How the matching plug-in effect treats control rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchingConvention {
    /// Multiply the matched outcome difference by `2w - 1`, so a control
    /// row's effect is its neighbour's outcome minus its own.
    SignCorrected,
    /// Use the raw difference `y_i - y_match` for every row, which flips
    /// the sign of the true effect on control rows.
    AsWritten,
}

/// Evaluates one observational metric on an estimator's predicted effects.
///
/// `oracle_pehe` is not computable from a context; use [`oracle_pehe`] with
/// the true effects instead.
pub fn evaluate_metric(
    desc: &MetricDescriptor,
    t_hat: &[f64],
    ctx: &MetricContext,
) -> Result<ScoreValue, ScoresError> {
    match desc.name {
        MetricName::Value => value_score(t_hat, ctx),
        MetricName::ValueDr => value_dr_score(t_hat, ctx, None, ValueDrVariant::ObservedArm),
        MetricName::ValueDrClip => {
            value_dr_score(t_hat, ctx, desc.clip_alpha, ValueDrVariant::ObservedArm)
        }
        MetricName::TauT => tau_t_score(t_hat, ctx),
        MetricName::TauS => tau_s_score(t_hat, ctx),
        MetricName::TauMatch => tau_match_score(t_hat, ctx, MatchingConvention::SignCorrected),
        MetricName::TauIptw => tau_iptw_score(t_hat, ctx, None),
        MetricName::TauIptwClip => tau_iptw_score(t_hat, ctx, desc.clip_alpha),
        MetricName::TauDr => tau_dr_score(t_hat, ctx, None),
        MetricName::TauDrClip => tau_dr_score(t_hat, ctx, desc.clip_alpha),
        MetricName::Influence => influence_score(t_hat, ctx, None),
        MetricName::InfluenceClip => influence_score(t_hat, ctx, desc.clip_alpha),
        MetricName::RScore => r_score(t_hat, ctx),
        MetricName::OraclePehe => Err(ScoresError::NeedsGroundTruth),
    }
}

/// Mean squared error between predicted and true effects.
pub fn oracle_pehe(t_hat: &[f64], tau: &[f64]) -> Result<ScoreValue, ScoresError> {
    if t_hat.len() != tau.len() {
        return Err(ScoresError::LengthMismatch {
            context: "oracle pehe",
            expected: tau.len(),
            found: t_hat.len(),
        });
    }
    if tau.is_empty() {
        return Err(ScoresError::BadValues {
            reason: "oracle pehe over zero rows".into(),
        });
    }
    let value = t_hat
        .iter()
        .zip(tau)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / tau.len() as f64;
    finish(MetricName::OraclePehe, value, tau.len())
}

/// Row indices whose propensity lies strictly inside `(alpha, 1 - alpha)`.
pub fn clip_rows(pi: &[f64], alpha: f64) -> Result<Vec<usize>, ScoresError> {
    check_alpha(alpha)?;
    Ok(pi
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > alpha && p < 1.0 - alpha)
        .map(|(i, _)| i)
        .collect())
}

/// Mean inverse-propensity-weighted outcome over rows where the observed
/// treatment agrees with the estimator's decision policy.
pub fn value_score(t_hat: &[f64], ctx: &MetricContext) -> Result<ScoreValue, ScoresError> {
    check_predictions(t_hat, ctx)?;
    let n = ctx.n_val();
    let mut total = 0.0;
    for (i, &pred) in t_hat.iter().enumerate() {
        if ctx.policy().treat(pred) == ctx.w()[i] {
            let p_obs = if ctx.w()[i] {
                ctx.pi()[i]
            } else {
                1.0 - ctx.pi()[i]
            };
            total += ctx.y()[i] / p_obs;
        }
    }
    finish(MetricName::Value, total / n as f64, n)
}

/// Which doubly robust outcome the policy value multiplies by the decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueDrVariant {
    /// `d(x) * y_dr` at the *observed* arm. The primary form.
    ObservedArm,
    /// `d(x) * y_dr_1 + (1 - d(x)) * y_dr_0`: the value of the policy
    /// itself, counting untreated rows through their control outcome.
    PolicyArms,
}

/// Mean doubly robust policy value under the estimator's decision policy.
pub fn value_dr_score(
    t_hat: &[f64],
    ctx: &MetricContext,
    clip_alpha: Option<f64>,
    variant: ValueDrVariant,
) -> Result<ScoreValue, ScoresError> {
    check_predictions(t_hat, ctx)?;
    let rows = retained(ctx, clip_alpha)?;
    let pseudo = dr_pseudo_from_preds(ctx.y(), ctx.w(), ctx.s0(), ctx.s1(), ctx.pi())?;
    let total: f64 = rows
        .iter()
        .map(|&i| {
            let d = f64::from(u8::from(ctx.policy().treat(t_hat[i])));
            match variant {
                ValueDrVariant::ObservedArm => {
                    let observed = if ctx.w()[i] {
                        pseudo.y1[i]
                    } else {
                        pseudo.y0[i]
                    };
                    d * observed
                }
                ValueDrVariant::PolicyArms => d * pseudo.y1[i] + (1.0 - d) * pseudo.y0[i],
            }
        })
        .sum();
    let name = if clip_alpha.is_some() {
        MetricName::ValueDrClip
    } else {
        MetricName::ValueDr
    };
    finish(name, total / rows.len() as f64, rows.len())
}

/// Mean squared gap to the per-arm outcome models' plug-in effect.
pub fn tau_t_score(t_hat: &[f64], ctx: &MetricContext) -> Result<ScoreValue, ScoresError> {
    check_predictions(t_hat, ctx)?;
    let value = mean_squared_gap(t_hat, ctx.mu1().iter().zip(ctx.mu0()).map(|(a, b)| a - b));
    finish(MetricName::TauT, value, ctx.n_val())
}

/// Mean squared gap to the joint outcome model's plug-in effect.
pub fn tau_s_score(t_hat: &[f64], ctx: &MetricContext) -> Result<ScoreValue, ScoresError> {
    check_predictions(t_hat, ctx)?;
    let value = mean_squared_gap(t_hat, ctx.s1().iter().zip(ctx.s0()).map(|(a, b)| a - b));
    finish(MetricName::TauS, value, ctx.n_val())
}

/// Mean squared gap to the matched-neighbour effect estimate.
pub fn tau_match_score(
    t_hat: &[f64],
    ctx: &MetricContext,
    convention: MatchingConvention,
) -> Result<ScoreValue, ScoresError> {
    check_predictions(t_hat, ctx)?;
    let effects = (0..ctx.n_val()).map(|i| {
        let diff = ctx.y()[i] - ctx.y()[ctx.matched()[i]];
        match convention {
            MatchingConvention::SignCorrected => (2.0 * ctx.w_f()[i] - 1.0) * diff,
            MatchingConvention::AsWritten => diff,
        }
    });
    let value = mean_squared_gap(t_hat, effects);
    finish(MetricName::TauMatch, value, ctx.n_val())
}

/// Mean squared gap to the inverse-propensity-weighted effect estimate.
pub fn tau_iptw_score(
    t_hat: &[f64],
    ctx: &MetricContext,
    clip_alpha: Option<f64>,
) -> Result<ScoreValue, ScoresError> {
    check_predictions(t_hat, ctx)?;
    let rows = retained(ctx, clip_alpha)?;
    let effects = ipw_pseudo(ctx.y(), ctx.w(), ctx.pi())?.effects();
    let value = mean_squared_gap_over(&rows, t_hat, &effects);
    let name = if clip_alpha.is_some() {
        MetricName::TauIptwClip
    } else {
        MetricName::TauIptw
    };
    finish(name, value, rows.len())
}

/// Mean squared gap to the doubly robust effect estimate.
pub fn tau_dr_score(
    t_hat: &[f64],
    ctx: &MetricContext,
    clip_alpha: Option<f64>,
) -> Result<ScoreValue, ScoresError> {
    check_predictions(t_hat, ctx)?;
    let rows = retained(ctx, clip_alpha)?;
    let effects = dr_pseudo_from_preds(ctx.y(), ctx.w(), ctx.s0(), ctx.s1(), ctx.pi())?.effects();
    let value = mean_squared_gap_over(&rows, t_hat, &effects);
    let name = if clip_alpha.is_some() {
        MetricName::TauDrClip
    } else {
        MetricName::TauDr
    };
    finish(name, value, rows.len())
}

/// Plug-in squared error against the per-arm effect estimate, debiased by a
/// per-row influence correction.
///
/// With `t~` the plug-in effect, `l~ = (t_hat - t~)^2` the per-row plug-in
/// error, `a = w - pi`, `c = pi * (1 - pi)`, and `b = 2 * w * a / c`, each
/// row contributes
///
/// ```text
/// l~ + (1 - b) * t~^2 + b * y * (t~ - t_hat) - (a + 1) * l~ + t_hat^2
/// ```
pub fn influence_score(
    t_hat: &[f64],
    ctx: &MetricContext,
    clip_alpha: Option<f64>,
) -> Result<ScoreValue, ScoresError> {
    check_predictions(t_hat, ctx)?;
    let rows = retained(ctx, clip_alpha)?;
    let total: f64 = rows
        .iter()
        .map(|&i| {
            let t_tilde = ctx.mu1()[i] - ctx.mu0()[i];
            let plug_in = (t_hat[i] - t_tilde) * (t_hat[i] - t_tilde);
            let a = ctx.w_f()[i] - ctx.pi()[i];
            let c = ctx.pi()[i] * (1.0 - ctx.pi()[i]);
            let b = 2.0 * ctx.w_f()[i] * a / c;
            let correction = (1.0 - b) * t_tilde * t_tilde
                + b * ctx.y()[i] * (t_tilde - t_hat[i])
                - (a + 1.0) * plug_in
                + t_hat[i] * t_hat[i];
            plug_in + correction
        })
        .sum();
    let name = if clip_alpha.is_some() {
        MetricName::InfluenceClip
    } else {
        MetricName::Influence
    };
    finish(name, total / rows.len() as f64, rows.len())
}

/// Mean squared error of the orthogonalized regression residual when the
/// estimator's effects stand in for the true ones.
pub fn r_score(t_hat: &[f64], ctx: &MetricContext) -> Result<ScoreValue, ScoresError> {
    check_predictions(t_hat, ctx)?;
    let n = ctx.n_val();
    let total: f64 = (0..n)
        .map(|i| {
            let v = (ctx.y()[i] - ctx.g()[i]) - t_hat[i] * (ctx.w_f()[i] - ctx.pi()[i]);
            v * v
        })
        .sum();
    finish(MetricName::RScore, total / n as f64, n)
}

fn check_alpha(alpha: f64) -> Result<(), ScoresError> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(ScoresError::BadAlpha { value: alpha });
    }
    Ok(())
}

fn check_predictions(t_hat: &[f64], ctx: &MetricContext) -> Result<(), ScoresError> {
    if t_hat.len() != ctx.n_val() {
        return Err(ScoresError::LengthMismatch {
            context: "predicted effects",
            expected: ctx.n_val(),
            found: t_hat.len(),
        });
    }
    if t_hat.iter().any(|v| !v.is_finite()) {
        return Err(ScoresError::BadValues {
            reason: "predicted effects contain a non-finite value".into(),
        });
    }
    Ok(())
}

/// The rows a metric evaluates: all of them, or the clip survivors.
fn retained(ctx: &MetricContext, clip_alpha: Option<f64>) -> Result<Vec<usize>, ScoresError> {
    match clip_alpha {
        None => Ok((0..ctx.n_val()).collect()),
        Some(alpha) => {
            let rows = clip_rows(ctx.pi(), alpha)?;
            if rows.is_empty() {
                return Err(ScoresError::AllRowsClipped { alpha });
            }
            Ok(rows)
        }
    }
}

fn mean_squared_gap(t_hat: &[f64], targets: impl Iterator<Item = f64>) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, t) in t_hat.iter().zip(targets) {
        total += (p - t) * (p - t);
        count += 1;
    }
    total / count as f64
}

fn mean_squared_gap_over(rows: &[usize], t_hat: &[f64], targets: &[f64]) -> f64 {
    rows.iter()
        .map(|&i| (t_hat[i] - targets[i]) * (t_hat[i] - targets[i]))
        .sum::<f64>()
        / rows.len() as f64
}

fn finish(name: MetricName, value: f64, n_used: usize) -> Result<ScoreValue, ScoresError> {
    if !value.is_finite() {
        return Err(ScoresError::NonFinite {
            name: name.as_str(),
        });
    }
    Ok(ScoreValue {
        metric: name,
        value,
        n_used,
    })
}
