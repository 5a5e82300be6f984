//! Learner fitting routines, pseudo-outcome constructions, and the bank
//! builder that instantiates every (kind, final-model) combination.

use rayon::prelude::*;

use crate::datagen::ObservationalDataset;
use crate::models::{fit_regressor, PropensityModel, RegressorModel, RegressorSpec};
use crate::numerics::{Matrix, RngStream};

use super::{
    arm_indices, final_label, singleton_label, CateEstimator, CateEstimatorKind, FittedCate,
    LearnersError, NuisanceSet,
};

/// Weights below this are treated as identically zero in the R-learner's
/// weighted regression.
const WEIGHT_FLOOR: f64 = 1e-12;

/// Per-row estimates of both potential outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoOutcomes {
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
}

impl PseudoOutcomes {
    /// Per-row treatment-effect estimates `y1 - y0`.
    pub fn effects(&self) -> Vec<f64> {
        self.y1.iter().zip(&self.y0).map(|(a, b)| a - b).collect()
    }
}

/// Inverse-propensity-weighted potential outcomes: the observed arm's
/// outcome scaled by its assignment probability, zero for the other arm.
///
/// `pi` holds treatment probabilities; the control probability is its
/// complement.
pub fn ipw_pseudo(y: &[f64], w: &[bool], pi: &[f64]) -> Result<PseudoOutcomes, LearnersError> {
    check_lengths("ipw pseudo-outcomes", y.len(), w.len(), pi.len())?;
    for (i, &p) in pi.iter().enumerate() {
        if !(p > 0.0 && p < 1.0) {
            return Err(LearnersError::BadPropensity { index: i, value: p });
        }
    }
    let mut y1 = vec![0.0; y.len()];
    let mut y0 = vec![0.0; y.len()];
    for i in 0..y.len() {
        if w[i] {
            y1[i] = y[i] / pi[i];
        } else {
            y0[i] = y[i] / (1.0 - pi[i]);
        }
    }
    Ok(PseudoOutcomes { y1, y0 })
}

/// Doubly robust potential outcomes from already-computed nuisance
/// predictions: the outcome model's plug-in plus the inverse-propensity
/// weighted residual for the observed arm.
pub fn dr_pseudo_from_preds(
    y: &[f64],
    w: &[bool],
    mu0: &[f64],
    mu1: &[f64],
    pi: &[f64],
) -> Result<PseudoOutcomes, LearnersError> {
    check_lengths("dr pseudo-outcomes", y.len(), w.len(), pi.len())?;
    check_lengths("dr pseudo-outcomes", y.len(), mu0.len(), mu1.len())?;
    for (i, &p) in pi.iter().enumerate() {
        if !(p > 0.0 && p < 1.0) {
            return Err(LearnersError::BadPropensity { index: i, value: p });
        }
    }
    let mut y1 = Vec::with_capacity(y.len());
    let mut y0 = Vec::with_capacity(y.len());
    for i in 0..y.len() {
        if w[i] {
            let residual = y[i] - mu1[i];
            y1.push(mu1[i] + residual / pi[i]);
            y0.push(mu0[i]);
        } else {
            let residual = y[i] - mu0[i];
            y1.push(mu1[i]);
            y0.push(mu0[i] + residual / (1.0 - pi[i]));
        }
    }
    Ok(PseudoOutcomes { y1, y0 })
}

/// Doubly robust potential outcomes with predictions taken from a joint
/// outcome model and a propensity model.
pub fn dr_pseudo(
    x: &Matrix,
    y: &[f64],
    w: &[bool],
    mu_xw: &RegressorModel,
    pi: &PropensityModel,
) -> Result<PseudoOutcomes, LearnersError> {
    let (mu0, mu1) = joint_arm_predictions(mu_xw, x)?;
    let probs = pi.predict_proba(x)?;
    dr_pseudo_from_preds(y, w, &mu0, &mu1, &probs)
}

/// Both counterfactual plug-ins of a joint `(X, W)` outcome model.
pub(crate) fn joint_arm_predictions(
    mu_xw: &RegressorModel,
    x: &Matrix,
) -> Result<(Vec<f64>, Vec<f64>), LearnersError> {
    let mu0 = mu_xw.predict(&x.with_extra_column(&vec![0.0; x.rows()])?)?;
    let mu1 = mu_xw.predict(&x.with_extra_column(&vec![1.0; x.rows()])?)?;
    Ok((mu0, mu1))
}

fn check_lengths(
    context: &'static str,
    n: usize,
    a: usize,
    b: usize,
) -> Result<(), LearnersError> {
    for len in [a, b] {
        if len != n {
            return Err(LearnersError::LengthMismatch {
                context,
                expected: n,
                found: len,
            });
        }
    }
    Ok(())
}

pub fn fit_s(nuis: &NuisanceSet) -> Result<CateEstimator, LearnersError> {
    let mu_xw = nuis.require_mu_xw()?.clone();
    Ok(CateEstimator {
        kind: CateEstimatorKind::S,
        label: singleton_label(CateEstimatorKind::S),
        inner: FittedCate::S { mu_xw },
    })
}

pub fn fit_t(nuis: &NuisanceSet) -> Result<CateEstimator, LearnersError> {
    let mu0 = nuis.require_mu0()?.clone();
    let mu1 = nuis.require_mu1()?.clone();
    Ok(CateEstimator {
        kind: CateEstimatorKind::T,
        label: singleton_label(CateEstimatorKind::T),
        inner: FittedCate::T { mu0, mu1 },
    })
}

/// Regresses the S-learner's plug-in effect on the covariates with the
/// given final model, adding a regularization stage on top of `fit_s`.
pub fn fit_projected_s(
    nuis: &NuisanceSet,
    data: &ObservationalDataset,
    final_spec: &RegressorSpec,
    rng: &RngStream,
) -> Result<CateEstimator, LearnersError> {
    let mu_xw = nuis.require_mu_xw()?;
    let (mu0, mu1) = joint_arm_predictions(mu_xw, data.x())?;
    let targets: Vec<f64> = mu1.iter().zip(&mu0).map(|(a, b)| a - b).collect();
    let model = fit_regressor(final_spec, data.x(), &targets, None, rng)?;
    Ok(with_final(CateEstimatorKind::ProjectedS, final_spec, model))
}

/// Fits per-arm imputed-effect regressions and blends them by propensity:
/// controls learn `mu1(x) - y`, treated rows learn `y - mu0(x)`, and the
/// prediction weights the control-arm model by the treatment probability's
/// complement.
pub fn fit_x(
    nuis: &NuisanceSet,
    data: &ObservationalDataset,
    final_spec: &RegressorSpec,
    rng: &RngStream,
) -> Result<CateEstimator, LearnersError> {
    let mu0 = nuis.require_mu0()?;
    let mu1 = nuis.require_mu1()?;
    let pi = nuis.require_pi()?.clone();
    let (controls, treated) = arm_indices(data.w());
    if controls.is_empty() {
        return Err(LearnersError::EmptyArm { arm: "control" });
    }
    if treated.is_empty() {
        return Err(LearnersError::EmptyArm { arm: "treated" });
    }

    let xc = data.x().select_rows(&controls);
    let imputed0: Vec<f64> = mu1
        .predict(&xc)?
        .iter()
        .zip(controls.iter().map(|&i| data.y()[i]))
        .map(|(m1, y)| m1 - y)
        .collect();
    let f0 = fit_regressor(final_spec, &xc, &imputed0, None, &rng.child("f0"))?;

    let xt = data.x().select_rows(&treated);
    let imputed1: Vec<f64> = mu0
        .predict(&xt)?
        .iter()
        .zip(treated.iter().map(|&i| data.y()[i]))
        .map(|(m0, y)| y - m0)
        .collect();
    let f1 = fit_regressor(final_spec, &xt, &imputed1, None, &rng.child("f1"))?;

    Ok(CateEstimator {
        kind: CateEstimatorKind::X,
        label: final_label(CateEstimatorKind::X, final_spec),
        inner: FittedCate::X { f0, f1, pi },
    })
}

/// Regresses the difference of inverse-propensity-weighted pseudo-outcomes
/// on the covariates.
pub fn fit_ipw(
    nuis: &NuisanceSet,
    data: &ObservationalDataset,
    final_spec: &RegressorSpec,
    rng: &RngStream,
) -> Result<CateEstimator, LearnersError> {
    let pi = nuis.require_pi()?;
    let probs = pi.predict_proba(data.x())?;
    let targets = ipw_pseudo(data.y(), data.w(), &probs)?.effects();
    let model = fit_regressor(final_spec, data.x(), &targets, None, rng)?;
    Ok(with_final(CateEstimatorKind::Ipw, final_spec, model))
}

/// Regresses the difference of doubly robust pseudo-outcomes on the
/// covariates.
pub fn fit_dr(
    nuis: &NuisanceSet,
    data: &ObservationalDataset,
    final_spec: &RegressorSpec,
    rng: &RngStream,
) -> Result<CateEstimator, LearnersError> {
    let mu_xw = nuis.require_mu_xw()?;
    let pi = nuis.require_pi()?;
    let targets = dr_pseudo(data.x(), data.y(), data.w(), mu_xw, pi)?.effects();
    let model = fit_regressor(final_spec, data.x(), &targets, None, rng)?;
    Ok(with_final(CateEstimatorKind::Dr, final_spec, model))
}

/// The residual-on-residual learner: regresses
/// `(y - m(x)) / (w - pi(x))` on the covariates with per-row weights
/// `(w - pi(x))^2`, so that the weighted square loss matches the
/// orthogonalized regression objective.
pub fn fit_r(
    nuis: &NuisanceSet,
    data: &ObservationalDataset,
    final_spec: &RegressorSpec,
    rng: &RngStream,
) -> Result<CateEstimator, LearnersError> {
    let m_x = nuis.require_m_x()?;
    let pi = nuis.require_pi()?;
    let m_hat = m_x.predict(data.x())?;
    let probs = pi.predict_proba(data.x())?;
    let w_f = data.w_f64();

    let mut targets = Vec::with_capacity(data.n());
    let mut weights = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let denom = w_f[i] - probs[i];
        let weight = denom * denom;
        if weight < WEIGHT_FLOOR {
            targets.push(0.0);
            weights.push(0.0);
        } else {
            targets.push((data.y()[i] - m_hat[i]) / denom);
            weights.push(weight);
        }
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(LearnersError::DegenerateWeights {
            floor: WEIGHT_FLOOR,
        });
    }
    let model = fit_regressor(final_spec, data.x(), &targets, Some(&weights), rng)?;
    Ok(with_final(CateEstimatorKind::R, final_spec, model))
}

fn with_final(
    kind: CateEstimatorKind,
    final_spec: &RegressorSpec,
    model: RegressorModel,
) -> CateEstimator {
    CateEstimator {
        kind,
        label: final_label(kind, final_spec),
        inner: FittedCate::Final { model },
    }
}

/// One slot in the estimator bank. A failed fit keeps its label and kind so
/// the failure can be reported without aborting the rest of the bank.
#[derive(Debug)]
pub struct BankMember {
    pub kind: CateEstimatorKind,
    pub label: String,
    pub fitted: Result<CateEstimator, LearnersError>,
}

/// Instantiates the full estimator bank: one member per singleton kind and
/// one per (final-model kind, final spec) pair, in a stable order.
///
/// Members fit independently against the shared nuisances, each from an RNG
/// stream keyed by its own label, so the bank's composition never changes
/// any individual member's result.
pub fn build_bank(
    nuis: &NuisanceSet,
    data: &ObservationalDataset,
    kinds: &[CateEstimatorKind],
    final_specs: &[RegressorSpec],
    rng: &RngStream,
) -> Result<Vec<BankMember>, LearnersError> {
    let mut slots: Vec<(CateEstimatorKind, Option<&RegressorSpec>, String)> = Vec::new();
    for &kind in kinds {
        if kind.uses_final_model() {
            for spec in final_specs {
                slots.push((kind, Some(spec), final_label(kind, spec)));
            }
        } else {
            slots.push((kind, None, singleton_label(kind)));
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for (_, _, label) in &slots {
        if !seen.insert(label.clone()) {
            return Err(LearnersError::DuplicateLabel {
                label: label.clone(),
            });
        }
    }

    Ok(slots
        .into_par_iter()
        .map(|(kind, spec, label)| {
            let member_rng = rng.child(&label);
            let fitted = match kind {
                CateEstimatorKind::S => fit_s(nuis),
                CateEstimatorKind::T => fit_t(nuis),
                CateEstimatorKind::ProjectedS => {
                    fit_projected_s(nuis, data, spec.unwrap(), &member_rng)
                }
                CateEstimatorKind::X => fit_x(nuis, data, spec.unwrap(), &member_rng),
                CateEstimatorKind::Ipw => fit_ipw(nuis, data, spec.unwrap(), &member_rng),
                CateEstimatorKind::Dr => fit_dr(nuis, data, spec.unwrap(), &member_rng),
                CateEstimatorKind::R => fit_r(nuis, data, spec.unwrap(), &member_rng),
            };
            BankMember {
                kind,
                label,
                fitted,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{final_model_bank, TreeDepth};
    use rand::Rng;

    fn covariates(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = RngStream::new(seed).rng();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        Matrix::from_rows(&rows).unwrap()
    }

    /// Noiseless y = x0 + w * (1 + x1): linear base outcome with a linear
    /// heterogeneous effect tau(x) = 1 + x1.
    fn linear_het_data(n: usize, seed: u64) -> (ObservationalDataset, Vec<f64>) {
        let x = covariates(n, 2, seed);
        let mut rng = RngStream::new(seed).child("w").rng();
        let w: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let y: Vec<f64> = x
            .iter_rows()
            .zip(&w)
            .map(|(r, &t)| r[0] + if t { 1.0 + r[1] } else { 0.0 })
            .collect();
        let tau: Vec<f64> = x.iter_rows().map(|r| 1.0 + r[1]).collect();
        (ObservationalDataset::new(x, w, y).unwrap(), tau)
    }

    fn exact_mu_xw(data: &ObservationalDataset) -> RegressorModel {
        let xw = data.x().with_extra_column(&data.w_f64()).unwrap();
        fit_regressor(
            &RegressorSpec::poly2_interaction(),
            &xw,
            data.y(),
            None,
            &RngStream::new(0),
        )
        .unwrap()
    }

    fn exact_arms(data: &ObservationalDataset) -> (RegressorModel, RegressorModel) {
        let (controls, treated) = arm_indices(data.w());
        let fit_arm = |idx: &[usize]| {
            let x = data.x().select_rows(idx);
            let y: Vec<f64> = idx.iter().map(|&i| data.y()[i]).collect();
            fit_regressor(&RegressorSpec::linear(), &x, &y, None, &RngStream::new(0)).unwrap()
        };
        (fit_arm(&controls), fit_arm(&treated))
    }

    fn pehe(predicted: &[f64], tau: &[f64]) -> f64 {
        predicted
            .iter()
            .zip(tau)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / predicted.len() as f64
    }

    #[test]
    fn s_learner_reads_off_a_constant_treatment_gap() {
        // y = x + 2w exactly, so the joint linear fit is exact and the
        // plug-in difference is 2 everywhere.
        let x = covariates(40, 1, 0);
        let w: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let y: Vec<f64> = x
            .iter_rows()
            .zip(&w)
            .map(|(r, &t)| r[0] + if t { 2.0 } else { 0.0 })
            .collect();
        let data = ObservationalDataset::new(x, w, y).unwrap();
        let xw = data.x().with_extra_column(&data.w_f64()).unwrap();
        let mu_xw = fit_regressor(
            &RegressorSpec::linear(),
            &xw,
            data.y(),
            None,
            &RngStream::new(0),
        )
        .unwrap();
        let est = fit_s(&NuisanceSet::new().with_mu_xw(mu_xw)).unwrap();
        assert_eq!(est.label(), "s|-|-");
        let preds = est.predict_cate(&covariates(10, 1, 1)).unwrap();
        assert!(preds.iter().all(|p| (p - 2.0).abs() < 1e-6), "{preds:?}");
    }

    #[test]
    fn s_learner_sees_no_effect_when_outcome_ignores_treatment() {
        let x = covariates(40, 1, 2);
        let w: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let y: Vec<f64> = x.iter_rows().map(|r| 3.0 * r[0] - 1.0).collect();
        let data = ObservationalDataset::new(x, w, y).unwrap();
        let xw = data.x().with_extra_column(&data.w_f64()).unwrap();
        let mu_xw = fit_regressor(
            &RegressorSpec::linear(),
            &xw,
            data.y(),
            None,
            &RngStream::new(0),
        )
        .unwrap();
        let est = fit_s(&NuisanceSet::new().with_mu_xw(mu_xw)).unwrap();
        let preds = est.predict_cate(data.x()).unwrap();
        assert!(preds.iter().all(|p| p.abs() < 1e-6), "{preds:?}");
    }

    #[test]
    fn t_learner_with_identical_arms_predicts_zero() {
        // Both arms carry the same (x, y) relationship, so the per-arm fits
        // agree and their difference vanishes.
        let x = covariates(60, 2, 3);
        let w: Vec<bool> = (0..60).map(|i| i < 30).collect();
        let y: Vec<f64> = x.iter_rows().map(|r| r[0] - 2.0 * r[1]).collect();
        let data = ObservationalDataset::new(x, w, y).unwrap();
        let (mu0, mu1) = exact_arms(&data);
        let est = fit_t(&NuisanceSet::new().with_arms(mu0, mu1)).unwrap();
        assert_eq!(est.label(), "t|-|-");
        let preds = est.predict_cate(data.x()).unwrap();
        assert!(preds.iter().all(|p| p.abs() < 1e-8), "{preds:?}");
    }

    #[test]
    fn t_learner_arms_never_share_rows() {
        // A huge treated-arm offset must flow through mu1 only: if mu0 ever
        // saw treated rows the control predictions would be dragged upward.
        let x = covariates(60, 1, 4);
        let w: Vec<bool> = (0..60).map(|i| i % 2 == 0).collect();
        let y: Vec<f64> = x
            .iter_rows()
            .zip(&w)
            .map(|(r, &t)| r[0] + if t { 1000.0 } else { 0.0 })
            .collect();
        let data = ObservationalDataset::new(x, w, y).unwrap();
        let (mu0, mu1) = exact_arms(&data);
        let probe = covariates(12, 1, 5);
        let m0 = mu0.predict(&probe).unwrap();
        assert!(m0.iter().zip(probe.column(0)).all(|(p, x)| (p - x).abs() < 1e-6));
        let est = fit_t(&NuisanceSet::new().with_arms(mu0, mu1)).unwrap();
        let preds = est.predict_cate(&probe).unwrap();
        assert!(preds.iter().all(|p| (p - 1000.0).abs() < 1e-6));
    }

    #[test]
    fn projected_s_with_linear_final_matches_s_on_linear_targets() {
        // The plug-in effect of a no-interaction linear mu_xw is linear in
        // x, so re-regressing it with an unpenalized linear model loses
        // nothing.
        let (data, _) = linear_het_data(200, 6);
        let nuis = NuisanceSet::new().with_mu_xw(exact_mu_xw(&data));
        let s = fit_s(&nuis).unwrap();
        let proj = fit_projected_s(&nuis, &data, &RegressorSpec::linear(), &RngStream::new(0))
            .unwrap();
        assert_eq!(proj.label(), "proj-s|linear|-");
        let ps = proj.predict_cate(data.x()).unwrap();
        let ss = s.predict_cate(data.x()).unwrap();
        let max_diff = ps
            .iter()
            .zip(&ss)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 1e-6, "{max_diff}");
    }

    #[test]
    fn projected_s_under_huge_shrinkage_flattens_to_the_mean_effect() {
        let (data, _) = linear_het_data(200, 7);
        let nuis = NuisanceSet::new().with_mu_xw(exact_mu_xw(&data));
        let s = fit_s(&nuis).unwrap();
        let mean_effect = {
            let preds = s.predict_cate(data.x()).unwrap();
            preds.iter().sum::<f64>() / preds.len() as f64
        };
        let proj = fit_projected_s(&nuis, &data, &RegressorSpec::ridge(1e8), &RngStream::new(0))
            .unwrap();
        let preds = proj.predict_cate(data.x()).unwrap();
        assert!(preds.iter().all(|p| (p - mean_effect).abs() < 1e-4));
    }

    #[test]
    fn x_learner_recovers_a_constant_effect_exactly() {
        // With exact per-arm fits both imputed target sets are the constant
        // 2, and the propensity blend of two constants is that constant.
        let x = covariates(60, 1, 8);
        let w: Vec<bool> = (0..60).map(|i| i % 3 == 0).collect();
        let y: Vec<f64> = x
            .iter_rows()
            .zip(&w)
            .map(|(r, &t)| r[0] + if t { 2.0 } else { 0.0 })
            .collect();
        let data = ObservationalDataset::new(x, w, y).unwrap();
        let (mu0, mu1) = exact_arms(&data);
        let nuis = NuisanceSet::new()
            .with_arms(mu0, mu1)
            .with_pi(PropensityModel::constant(0.5, 1, 0.01).unwrap());
        let est = fit_x(&nuis, &data, &RegressorSpec::linear(), &RngStream::new(0)).unwrap();
        let preds = est.predict_cate(&covariates(15, 1, 9)).unwrap();
        assert!(preds.iter().all(|p| (p - 2.0).abs() < 1e-8), "{preds:?}");
    }

    #[test]
    fn x_learner_prediction_stays_between_its_arm_models() {
        let (data, _) = linear_het_data(300, 10);
        let nuis = NuisanceSet::new()
            .with_arms(exact_arms(&data).0, exact_arms(&data).1)
            .with_pi(PropensityModel::constant(0.3, 2, 0.01).unwrap());
        let est = fit_x(
            &nuis,
            &data,
            &RegressorSpec::tree(TreeDepth::Bounded(4)),
            &RngStream::new(0),
        )
        .unwrap();
        let probe = covariates(50, 2, 11);
        let preds = est.predict_cate(&probe).unwrap();
        let (f0, f1) = est.x_parts().unwrap();
        let e0 = f0.predict(&probe).unwrap();
        let e1 = f1.predict(&probe).unwrap();
        for i in 0..preds.len() {
            let (lo, hi) = (e0[i].min(e1[i]), e0[i].max(e1[i]));
            assert!(preds[i] >= lo - 1e-12 && preds[i] <= hi + 1e-12);
        }
    }

    #[test]
    fn x_learner_tracks_heterogeneous_effects() {
        let (data, tau) = linear_het_data(2000, 12);
        let (mu0, mu1) = exact_arms(&data);
        let nuis = NuisanceSet::new()
            .with_arms(mu0, mu1)
            .with_pi(PropensityModel::constant(0.5, 2, 0.01).unwrap());
        let est = fit_x(&nuis, &data, &RegressorSpec::linear(), &RngStream::new(0)).unwrap();
        let preds = est.predict_cate(data.x()).unwrap();
        assert!(pehe(&preds, &tau) < 0.05, "{}", pehe(&preds, &tau));
    }

    #[test]
    fn ipw_pseudo_scales_observed_outcomes() {
        let out = ipw_pseudo(&[2.0, 3.0], &[true, false], &[0.5, 0.25]).unwrap();
        assert_eq!(out.y1, vec![4.0, 0.0]);
        assert_eq!(out.y0, vec![0.0, 4.0]);
        assert_eq!(out.effects(), vec![4.0, -4.0]);
        assert!(ipw_pseudo(&[1.0], &[true], &[1.0]).is_err());
        assert!(ipw_pseudo(&[1.0, 2.0], &[true], &[0.5]).is_err());
    }

    #[test]
    fn ipw_pseudo_mean_tracks_the_treated_potential_outcome() {
        // Randomized assignment at rate 0.5: the IPW mean is unbiased for
        // the mean treated outcome, so it should land within a few standard
        // errors of it.
        let n = 5000;
        let x = covariates(n, 1, 13);
        let mut rng = RngStream::new(13).child("assign").rng();
        let w: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let y1_true: Vec<f64> = x.iter_rows().map(|r| 1.0 + r[0]).collect();
        let y: Vec<f64> = y1_true
            .iter()
            .zip(&w)
            .map(|(y1, &t)| if t { *y1 } else { 0.25 })
            .collect();
        let out = ipw_pseudo(&y, &w, &vec![0.5; n]).unwrap();
        let ipw_mean = out.y1.iter().sum::<f64>() / n as f64;
        let true_mean = y1_true.iter().sum::<f64>() / n as f64;
        // Var(Y_ipw_1) <= E[(2 * Y1)^2] <= 4 * E[(1 + x)^2] <= 16.
        let three_se = 3.0 * (16.0f64 / n as f64).sqrt();
        assert!(
            (ipw_mean - true_mean).abs() < three_se,
            "{ipw_mean} vs {true_mean}"
        );
    }

    #[test]
    fn dr_pseudo_with_zero_residuals_returns_the_plug_ins() {
        let x = covariates(30, 2, 14);
        let w: Vec<bool> = (0..30).map(|i| i % 2 == 0).collect();
        let probe_y: Vec<f64> = x.iter_rows().map(|r| r[0] + r[1]).collect();
        let mu_xw = {
            let xw = x.with_extra_column(&vec![0.5; 30]).unwrap();
            fit_regressor(
                &RegressorSpec::linear(),
                &xw,
                &probe_y,
                None,
                &RngStream::new(0),
            )
            .unwrap()
        };
        // Set y to the model's own observed-arm predictions: residuals are
        // exactly zero, so the pseudo-outcomes are exactly the plug-ins.
        let (mu0, mu1) = joint_arm_predictions(&mu_xw, &x).unwrap();
        let y: Vec<f64> = w
            .iter()
            .zip(mu0.iter().zip(&mu1))
            .map(|(&t, (m0, m1))| if t { *m1 } else { *m0 })
            .collect();
        let pi = PropensityModel::constant(0.4, 2, 0.01).unwrap();
        let out = dr_pseudo(&x, &y, &w, &mu_xw, &pi).unwrap();
        assert_eq!(out.y1, mu1);
        assert_eq!(out.y0, mu0);
    }

    #[test]
    fn dr_pseudo_reduces_to_ipw_when_the_outcome_model_is_zero() {
        let x = covariates(50, 2, 15);
        let mut rng = RngStream::new(15).child("w").rng();
        let w: Vec<bool> = (0..50).map(|_| rng.random_bool(0.5)).collect();
        let y: Vec<f64> = x.iter_rows().map(|r| 2.0 * r[0] - r[1] + 0.5).collect();
        // A linear fit on all-zero targets has exactly zero coefficients
        // and intercept, so its predictions are exactly 0.0.
        let xw = x.with_extra_column(&vec![0.5; 50]).unwrap();
        let zero_mu = fit_regressor(
            &RegressorSpec::linear(),
            &xw,
            &vec![0.0; 50],
            None,
            &RngStream::new(0),
        )
        .unwrap();
        let pi = PropensityModel::constant(0.35, 2, 0.01).unwrap();
        let dr = dr_pseudo(&x, &y, &w, &zero_mu, &pi).unwrap();
        let ipw = ipw_pseudo(&y, &w, &pi.predict_proba(&x).unwrap()).unwrap();
        assert_eq!(dr, ipw);
    }

    #[test]
    fn dr_pseudo_mean_is_robust_to_a_biased_outcome_model() {
        // Biased mu (fit to shifted targets) but the true propensity: the
        // DR effect mean stays within a few standard errors of mean tau.
        let n = 5000;
        let (data, tau) = linear_het_data(n, 16);
        let shifted: Vec<f64> = data.y().iter().map(|v| v + 3.0).collect();
        let xw = data.x().with_extra_column(&data.w_f64()).unwrap();
        let biased_mu = fit_regressor(
            &RegressorSpec::linear(),
            &xw,
            &shifted,
            None,
            &RngStream::new(0),
        )
        .unwrap();
        let pi = PropensityModel::constant(0.5, 2, 0.01).unwrap();
        let out = dr_pseudo(data.x(), data.y(), data.w(), &biased_mu, &pi).unwrap();
        let effects = out.effects();
        let dr_mean = effects.iter().sum::<f64>() / n as f64;
        let tau_mean = tau.iter().sum::<f64>() / n as f64;
        // Effects are bounded by ~2*(|y| + |mu|) / 0.5 <= ~40 here; a crude
        // variance bound of 40^2 gives a generous 3-SE band.
        let three_se = 3.0 * (1600.0f64 / n as f64).sqrt();
        assert!((dr_mean - tau_mean).abs() < three_se, "{dr_mean} vs {tau_mean}");
    }

    #[test]
    fn dr_learner_recovers_linear_effects_with_exact_nuisances() {
        let (data, tau) = linear_het_data(2000, 17);
        let nuis = NuisanceSet::new()
            .with_mu_xw(exact_mu_xw(&data))
            .with_pi(PropensityModel::constant(0.5, 2, 0.01).unwrap());
        let est = fit_dr(&nuis, &data, &RegressorSpec::linear(), &RngStream::new(0)).unwrap();
        let preds = est.predict_cate(data.x()).unwrap();
        assert!(pehe(&preds, &tau) < 1e-6, "{}", pehe(&preds, &tau));
    }

    #[test]
    fn dr_learner_with_zero_outcome_model_equals_ipw_learner() {
        let (data, _) = linear_het_data(300, 18);
        let xw = data.x().with_extra_column(&data.w_f64()).unwrap();
        let zero_mu = fit_regressor(
            &RegressorSpec::linear(),
            &xw,
            &vec![0.0; data.n()],
            None,
            &RngStream::new(0),
        )
        .unwrap();
        let pi = PropensityModel::constant(0.5, 2, 0.01).unwrap();
        let nuis = NuisanceSet::new().with_mu_xw(zero_mu).with_pi(pi);
        let spec = RegressorSpec::ridge(0.5);
        let dr = fit_dr(&nuis, &data, &spec, &RngStream::new(1)).unwrap();
        let ipw = fit_ipw(&nuis, &data, &spec, &RngStream::new(1)).unwrap();
        let probe = covariates(20, 2, 19);
        assert_eq!(
            dr.predict_cate(&probe).unwrap(),
            ipw.predict_cate(&probe).unwrap()
        );
    }

    #[test]
    fn r_learner_predicts_zero_when_residual_targets_vanish() {
        let x = covariates(100, 2, 20);
        let w: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        let y: Vec<f64> = x.iter_rows().map(|r| r[0] - r[1]).collect();
        let data = ObservationalDataset::new(x, w, y).unwrap();
        // m_x fit on the same linear outcome is exact, so every residual
        // target is zero and the final fit is the zero function.
        let m_x = fit_regressor(
            &RegressorSpec::linear(),
            data.x(),
            data.y(),
            None,
            &RngStream::new(0),
        )
        .unwrap();
        let nuis = NuisanceSet::new()
            .with_m_x(m_x)
            .with_pi(PropensityModel::constant(0.5, 2, 0.01).unwrap());
        let est = fit_r(&nuis, &data, &RegressorSpec::linear(), &RngStream::new(0)).unwrap();
        let preds = est.predict_cate(data.x()).unwrap();
        assert!(preds.iter().all(|p| p.abs() < 1e-8), "{preds:?}");
    }

    #[test]
    fn r_learner_recovers_linear_effects_on_randomized_data() {
        let n = 2000;
        let x = covariates(n, 2, 21);
        let mut rng = RngStream::new(21).child("w").rng();
        let w: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        // y = m(x) + tau(x) * (w - 1/2) with m(x) = x0, tau(x) = 1 + x1.
        let y: Vec<f64> = x
            .iter_rows()
            .zip(&w)
            .map(|(r, &t)| r[0] + (1.0 + r[1]) * (f64::from(u8::from(t)) - 0.5))
            .collect();
        let tau: Vec<f64> = x.iter_rows().map(|r| 1.0 + r[1]).collect();
        let data = ObservationalDataset::new(x, w, y).unwrap();
        let m_x = fit_regressor(
            &RegressorSpec::linear(),
            data.x(),
            data.y(),
            None,
            &RngStream::new(0),
        )
        .unwrap();
        let nuis = NuisanceSet::new()
            .with_m_x(m_x)
            .with_pi(PropensityModel::constant(0.5, 2, 0.01).unwrap());
        let est = fit_r(&nuis, &data, &RegressorSpec::linear(), &RngStream::new(0)).unwrap();
        let preds = est.predict_cate(data.x()).unwrap();
        assert!(pehe(&preds, &tau) < 1e-3, "{}", pehe(&preds, &tau));
    }

    #[test]
    fn r_learner_weighted_loss_identity_holds_on_training_data() {
        // The orthogonalized loss of the fitted model equals the weighted
        // MSE of the transformed regression it was fit by.
        let (data, _) = linear_het_data(150, 22);
        let m_x = fit_regressor(
            &RegressorSpec::ridge(0.3),
            data.x(),
            data.y(),
            None,
            &RngStream::new(0),
        )
        .unwrap();
        let pi = PropensityModel::constant(0.5, 2, 0.01).unwrap();
        let m_hat = m_x.predict(data.x()).unwrap();
        let probs = pi.predict_proba(data.x()).unwrap();
        let nuis = NuisanceSet::new().with_m_x(m_x).with_pi(pi);
        let est = fit_r(&nuis, &data, &RegressorSpec::ridge(0.1), &RngStream::new(0)).unwrap();
        let t_hat = est.predict_cate(data.x()).unwrap();

        let w_f = data.w_f64();
        let n = data.n() as f64;
        let r_loss: f64 = (0..data.n())
            .map(|i| {
                let v = (data.y()[i] - m_hat[i]) - t_hat[i] * (w_f[i] - probs[i]);
                v * v
            })
            .sum::<f64>()
            / n;
        let weighted_mse: f64 = (0..data.n())
            .map(|i| {
                let denom = w_f[i] - probs[i];
                let target = (data.y()[i] - m_hat[i]) / denom;
                denom * denom * (target - t_hat[i]) * (target - t_hat[i])
            })
            .sum::<f64>()
            / n;
        assert!((r_loss - weighted_mse).abs() < 1e-10, "{r_loss} vs {weighted_mse}");
    }

    #[test]
    fn exact_nuisances_drive_pehe_to_zero_for_s_t_dr_and_r() {
        let (data, tau) = linear_het_data(2000, 23);
        let (mu0, mu1) = exact_arms(&data);
        // m(x) = E[y | x] = x0 + (1 + x1)/2 is linear, so fitting the true
        // conditional mean directly yields the exact nuisance.
        let m_targets: Vec<f64> = data.x().iter_rows().map(|r| r[0] + 0.5 * (1.0 + r[1])).collect();
        let m_x = fit_regressor(
            &RegressorSpec::linear(),
            data.x(),
            &m_targets,
            None,
            &RngStream::new(0),
        )
        .unwrap();
        let nuis = NuisanceSet::new()
            .with_mu_xw(exact_mu_xw(&data))
            .with_arms(mu0, mu1)
            .with_m_x(m_x)
            .with_pi(PropensityModel::constant(0.5, 2, 0.01).unwrap());

        let rng = RngStream::new(0);
        let spec = RegressorSpec::linear();
        let estimators = [
            fit_s(&nuis).unwrap(),
            fit_t(&nuis).unwrap(),
            fit_dr(&nuis, &data, &spec, &rng).unwrap(),
            fit_r(&nuis, &data, &spec, &rng).unwrap(),
        ];
        for est in &estimators {
            let preds = est.predict_cate(data.x()).unwrap();
            let err = pehe(&preds, &tau);
            assert!(err < 1e-4, "{}: {err}", est.label());
        }
    }

    #[test]
    fn scaling_outcomes_scales_predictions_for_closed_form_finals() {
        let (data, _) = linear_het_data(200, 24);
        let scaled = ObservationalDataset::new(
            data.x().clone(),
            data.w().to_vec(),
            data.y().iter().map(|v| 2.0 * v).collect(),
        )
        .unwrap();

        let nuisances = |d: &ObservationalDataset| {
            let xw = d.x().with_extra_column(&d.w_f64()).unwrap();
            let mu_xw = fit_regressor(
                &RegressorSpec::ridge(0.5),
                &xw,
                d.y(),
                None,
                &RngStream::new(0),
            )
            .unwrap();
            let m_x = fit_regressor(
                &RegressorSpec::ridge(0.5),
                d.x(),
                d.y(),
                None,
                &RngStream::new(0),
            )
            .unwrap();
            NuisanceSet::new()
                .with_mu_xw(mu_xw)
                .with_m_x(m_x)
                .with_pi(PropensityModel::constant(0.5, 2, 0.01).unwrap())
        };
        let spec = RegressorSpec::ridge(0.25);
        let rng = RngStream::new(1);
        let probe = covariates(25, 2, 25);
        for (base, doubled) in [
            (
                fit_s(&nuisances(&data)).unwrap(),
                fit_s(&nuisances(&scaled)).unwrap(),
            ),
            (
                fit_dr(&nuisances(&data), &data, &spec, &rng).unwrap(),
                fit_dr(&nuisances(&scaled), &scaled, &spec, &rng).unwrap(),
            ),
            (
                fit_r(&nuisances(&data), &data, &spec, &rng).unwrap(),
                fit_r(&nuisances(&scaled), &scaled, &spec, &rng).unwrap(),
            ),
        ] {
            let a = base.predict_cate(&probe).unwrap();
            let b = doubled.predict_cate(&probe).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((2.0 * x - y).abs() < 1e-8 * (1.0 + y.abs()), "{}", base.label());
            }
        }
    }

    #[test]
    fn bank_counts_follow_the_kind_and_spec_lists() {
        let (data, _) = linear_het_data(120, 26);
        let (mu0, mu1) = exact_arms(&data);
        let m_x = fit_regressor(
            &RegressorSpec::linear(),
            data.x(),
            data.y(),
            None,
            &RngStream::new(0),
        )
        .unwrap();
        let nuis = NuisanceSet::new()
            .with_mu_xw(exact_mu_xw(&data))
            .with_arms(mu0, mu1)
            .with_m_x(m_x)
            .with_pi(PropensityModel::constant(0.5, 2, 0.01).unwrap());
        let kinds = [
            CateEstimatorKind::S,
            CateEstimatorKind::T,
            CateEstimatorKind::ProjectedS,
            CateEstimatorKind::X,
            CateEstimatorKind::Dr,
            CateEstimatorKind::R,
        ];
        let specs = final_model_bank(1).unwrap();
        assert_eq!(specs.len(), 13);
        let bank = build_bank(&nuis, &data, &kinds, &specs, &RngStream::new(2)).unwrap();
        assert_eq!(bank.len(), 2 + 4 * 13);
        let labels: std::collections::BTreeSet<&str> =
            bank.iter().map(|m| m.label.as_str()).collect();
        assert_eq!(labels.len(), bank.len());
        for member in &bank {
            let est = member.fitted.as_ref().expect(&member.label);
            assert_eq!(est.label(), member.label);
            let preds = est.predict_cate(data.x()).unwrap();
            assert!(preds.iter().all(|p| p.is_finite()));
        }

        let singletons = build_bank(&nuis, &data, &kinds[..2], &[], &RngStream::new(2)).unwrap();
        assert_eq!(singletons.len(), 2);

        let dup = build_bank(
            &nuis,
            &data,
            &kinds,
            &[RegressorSpec::linear(), RegressorSpec::linear()],
            &RngStream::new(2),
        );
        assert!(matches!(dup, Err(LearnersError::DuplicateLabel { .. })));
    }
}
