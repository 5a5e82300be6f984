//! Deterministic hyperparameter selection by k-fold cross-validation.
//!
//! Candidates are scored in list order on folds drawn once from the given
//! stream, and the lowest validation loss wins. Ties keep the earliest
//! candidate, so selection is reproducible and insensitive to how many
//! candidates come later in the list.

use serde::{Deserialize, Serialize};

use crate::numerics::{kfold, Matrix, RngStream};

use super::logistic::mean_log_loss;
use super::{
    fit_propensity, fit_regressor, ModelsError, PropensityFamily, PropensityModel, RegressorModel,
    RegressorSpec,
};

/// Limits on the cross-validation search.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionBudget {
    /// Candidates beyond this count are ignored (earliest kept).
    pub max_candidates: usize,
    /// Folds used for every candidate.
    pub cv_folds: usize,
}

impl Default for SelectionBudget {
    fn default() -> Self {
        Self {
            max_candidates: 50,
            cv_folds: 5,
        }
    }
}

impl SelectionBudget {
    pub fn validate(&self) -> Result<(), ModelsError> {
        if self.max_candidates == 0 {
            return Err(ModelsError::BadBudget {
                reason: "max_candidates must be at least 1".into(),
            });
        }
        if self.cv_folds < 2 {
            return Err(ModelsError::BadBudget {
                reason: format!("cv_folds must be at least 2, got {}", self.cv_folds),
            });
        }
        Ok(())
    }
}

/// Picks the candidate spec with the lowest cross-validated mean squared
/// error and refits it on all rows. Candidates that fail to fit are skipped;
/// if every one fails the last error is reported.
pub fn select_by_cv(
    candidates: &[RegressorSpec],
    x: &Matrix,
    y: &[f64],
    budget: &SelectionBudget,
    rng: &RngStream,
) -> Result<RegressorModel, ModelsError> {
    budget.validate()?;
    if candidates.is_empty() {
        return Err(ModelsError::NoCandidates);
    }
    let candidates = &candidates[..candidates.len().min(budget.max_candidates)];
    let folds = kfold(x.rows(), budget.cv_folds, &rng.child("folds"))?;

    let mut best: Option<(f64, usize)> = None;
    let mut last_error = String::new();
    for (idx, spec) in candidates.iter().enumerate() {
        let candidate_rng = rng.child(format!("{}|{}", spec.family_label(), spec.hyper_label()));
        match cv_mse(spec, x, y, &folds, &candidate_rng) {
            Ok(score) => {
                if best.is_none_or(|(best_score, _)| score < best_score) {
                    best = Some((score, idx));
                }
            }
            Err(err) => last_error = err.to_string(),
        }
    }
    let Some((_, winner)) = best else {
        return Err(ModelsError::AllCandidatesFailed { last: last_error });
    };
    let spec = &candidates[winner];
    let final_rng = rng
        .child(format!("{}|{}", spec.family_label(), spec.hyper_label()))
        .child("final");
    fit_regressor(spec, x, y, None, &final_rng)
}

fn cv_mse(
    spec: &RegressorSpec,
    x: &Matrix,
    y: &[f64],
    folds: &[Vec<usize>],
    rng: &RngStream,
) -> Result<f64, ModelsError> {
    let n = x.rows();
    let mut total = 0.0;
    for (fold_idx, fold) in folds.iter().enumerate() {
        let mut hold_out = vec![false; n];
        for &i in fold {
            hold_out[i] = true;
        }
        let train_idx: Vec<usize> = (0..n).filter(|&i| !hold_out[i]).collect();
        let x_train = x.select_rows(&train_idx);
        let y_train: Vec<f64> = train_idx.iter().map(|&i| y[i]).collect();
        let model = fit_regressor(
            spec,
            &x_train,
            &y_train,
            None,
            &rng.child_indexed("fold", fold_idx),
        )?;
        let preds = model.predict(&x.select_rows(fold))?;
        total += preds
            .iter()
            .zip(fold.iter().map(|&i| y[i]))
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>();
    }
    Ok(total / n as f64)
}

/// Picks the propensity family with the lowest cross-validated log-loss and
/// refits it on all rows. Folds that lose one treatment class fail that
/// candidate, mirroring [`select_by_cv`]'s skip behavior.
pub fn select_propensity_by_cv(
    families: &[PropensityFamily],
    x: &Matrix,
    w: &[bool],
    epsilon: f64,
    budget: &SelectionBudget,
    rng: &RngStream,
) -> Result<PropensityModel, ModelsError> {
    budget.validate()?;
    if families.is_empty() {
        return Err(ModelsError::NoCandidates);
    }
    let families = &families[..families.len().min(budget.max_candidates)];
    let folds = kfold(x.rows(), budget.cv_folds, &rng.child("folds"))?;
    let n = x.rows();

    let mut best: Option<(f64, usize)> = None;
    let mut last_error = String::new();
    for (idx, family) in families.iter().enumerate() {
        let mut total = 0.0;
        let mut failed = None;
        for fold in &folds {
            let mut hold_out = vec![false; n];
            for &i in fold {
                hold_out[i] = true;
            }
            let train_idx: Vec<usize> = (0..n).filter(|&i| !hold_out[i]).collect();
            let x_train = x.select_rows(&train_idx);
            let w_train: Vec<bool> = train_idx.iter().map(|&i| w[i]).collect();
            match fit_propensity(&x_train, &w_train, *family, epsilon) {
                Ok(model) => {
                    let probs = model.predict_proba(&x.select_rows(fold))?;
                    let w_fold: Vec<bool> = fold.iter().map(|&i| w[i]).collect();
                    total += mean_log_loss(&probs, &w_fold) * fold.len() as f64;
                }
                Err(err) => {
                    failed = Some(err);
                    break;
                }
            }
        }
        match failed {
            Some(err) => last_error = err.to_string(),
            None => {
                let score = total / n as f64;
                if best.is_none_or(|(best_score, _)| score < best_score) {
                    best = Some((score, idx));
                }
            }
        }
    }
    let Some((_, winner)) = best else {
        return Err(ModelsError::AllCandidatesFailed { last: last_error });
    };
    fit_propensity(x, w, families[winner], epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{KernelKind, TreeDepth};
    use rand::Rng;

    fn linear_data(n: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = RngStream::new(seed).rng();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = rows.iter().map(|r| 1.5 * r[0] - r[1] + 0.5).collect();
        (x, y)
    }

    #[test]
    fn picks_the_obviously_better_candidate() {
        let (x, y) = linear_data(60, 0);
        // An absurdly over-penalized ridge against plain least squares on
        // an exactly linear target.
        let candidates = [RegressorSpec::ridge(1e9), RegressorSpec::linear()];
        let model = select_by_cv(
            &candidates,
            &x,
            &y,
            &SelectionBudget::default(),
            &RngStream::new(0).child("select"),
        )
        .unwrap();
        assert_eq!(model.spec(), &RegressorSpec::linear());
    }

    #[test]
    fn selection_is_deterministic() {
        let (x, y) = linear_data(50, 1);
        let candidates = [
            RegressorSpec::ridge(0.1),
            RegressorSpec::lasso(0.1),
            RegressorSpec::tree(TreeDepth::Bounded(3)),
        ];
        let rng = RngStream::new(2).child("select");
        let budget = SelectionBudget::default();
        let a = select_by_cv(&candidates, &x, &y, &budget, &rng).unwrap();
        let b = select_by_cv(&candidates, &x, &y, &budget, &rng).unwrap();
        assert_eq!(a.spec(), b.spec());
        assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
    }

    #[test]
    fn budget_truncates_the_candidate_list() {
        let (x, y) = linear_data(40, 2);
        // The winning spec sits past the budget cutoff, so the best
        // in-budget candidate is chosen instead.
        let candidates = [
            RegressorSpec::ridge(1e5),
            RegressorSpec::ridge(1e4),
            RegressorSpec::linear(),
        ];
        let budget = SelectionBudget {
            max_candidates: 2,
            cv_folds: 5,
        };
        let model =
            select_by_cv(&candidates, &x, &y, &budget, &RngStream::new(0).child("s")).unwrap();
        assert_eq!(model.spec(), &RegressorSpec::ridge(1e4));
    }

    #[test]
    fn empty_candidates_and_bad_budgets_error() {
        let (x, y) = linear_data(30, 3);
        let rng = RngStream::new(0);
        assert!(matches!(
            select_by_cv(&[], &x, &y, &SelectionBudget::default(), &rng),
            Err(ModelsError::NoCandidates)
        ));
        let bad = SelectionBudget {
            max_candidates: 0,
            cv_folds: 5,
        };
        assert!(select_by_cv(&[RegressorSpec::linear()], &x, &y, &bad, &rng).is_err());
        let bad = SelectionBudget {
            max_candidates: 5,
            cv_folds: 1,
        };
        assert!(select_by_cv(&[RegressorSpec::linear()], &x, &y, &bad, &rng).is_err());
    }

    #[test]
    fn kernel_specs_participate_in_selection() {
        let (x, y) = linear_data(40, 4);
        let candidates = [
            RegressorSpec::kernel_ridge(KernelKind::Rbf, 0.1),
            RegressorSpec::linear(),
        ];
        let model = select_by_cv(
            &candidates,
            &x,
            &y,
            &SelectionBudget::default(),
            &RngStream::new(5).child("select"),
        )
        .unwrap();
        // Exact linear data: plain least squares generalizes better.
        assert_eq!(model.spec(), &RegressorSpec::linear());
    }

    #[test]
    fn propensity_selection_returns_a_working_model() {
        let mut rng = RngStream::new(6).rng();
        let rows: Vec<Vec<f64>> = (0..120)
            .map(|_| vec![rng.random_range(-2.0..2.0)])
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let w: Vec<bool> = rows.iter().map(|r| rng.random_bool(if r[0] > 0.0 { 0.8 } else { 0.2 })).collect();
        let model = select_propensity_by_cv(
            &[PropensityFamily::Logistic, PropensityFamily::GradientBoosting],
            &x,
            &w,
            0.01,
            &SelectionBudget::default(),
            &RngStream::new(7).child("pi"),
        )
        .unwrap();
        let probs = model.predict_proba(&x).unwrap();
        assert!(probs.iter().all(|&p| (0.01..=0.99).contains(&p)));
    }
}
