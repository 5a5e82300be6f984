//! Randomized invariants for the numeric kernels, the metric layer, and the
//! aggregation arithmetic.

use catebench_core::datagen::ObservationalDataset;
use catebench_core::numerics::{kfold, solve_spd, spearman, standardize, Matrix, RngStream};
use catebench_core::pipeline::{best_set, normalized_pehe, win_rate};
use catebench_core::scores::{
    clip_rows, evaluate_metric, oracle_pehe, tau_dr_score, tau_iptw_score, value_score,
    MetricContext, MetricDescriptor, MetricName, Orientation, PolicyDirection, ScoresError,
};
use catebench_core::pipeline::{RawResults, RawRow};
use proptest::prelude::*;

// ───────────────────────── strategies ─────────────────────────

/// Values as f64-exact small integers, so affine transforms stay injective.
fn grid_values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-1000i32..1000).prop_map(f64::from), n)
}

fn finite_values(n: usize, lim: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-lim..lim, n)
}

fn probabilities(n: usize, floor: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(floor..=(1.0 - floor), n)
}

/// Treatment vectors guaranteed to contain both classes.
fn treatments(n: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), n).prop_map(|mut w| {
        w[0] = false;
        w[1] = true;
        w
    })
}

#[derive(Debug, Clone)]
struct ContextParts {
    w: Vec<bool>,
    y: Vec<f64>,
    pi: Vec<f64>,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
    s0: Vec<f64>,
    s1: Vec<f64>,
    g: Vec<f64>,
    t_hat: Vec<f64>,
}

/// A full validation context with interior propensities, plus predictions.
fn context_parts(floor: f64) -> impl Strategy<Value = ContextParts> {
    (4usize..16).prop_flat_map(move |n| {
        (
            treatments(n),
            finite_values(n, 10.0),
            probabilities(n, floor),
            finite_values(n, 10.0),
            finite_values(n, 10.0),
            finite_values(n, 10.0),
            finite_values(n, 10.0),
            finite_values(n, 10.0),
            finite_values(n, 10.0),
        )
            .prop_map(|(w, y, pi, mu0, mu1, s0, s1, g, t_hat)| ContextParts {
                w,
                y,
                pi,
                mu0,
                mu1,
                s0,
                s1,
                g,
                t_hat,
            })
    })
}

fn build_context(parts: &ContextParts, policy: PolicyDirection) -> MetricContext {
    let n = parts.w.len();
    let x = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
    let val = ObservationalDataset::new(x, parts.w.clone(), parts.y.clone()).unwrap();
    MetricContext::from_values(
        &val,
        parts.pi.clone(),
        parts.mu0.clone(),
        parts.mu1.clone(),
        parts.s0.clone(),
        parts.s1.clone(),
        parts.g.clone(),
        policy,
    )
    .unwrap()
}

// ───────────────────────── numerics ─────────────────────────

proptest! {
    #[test]
    fn spearman_stays_in_bounds(pair in (2usize..30).prop_flat_map(|n| (grid_values(n), grid_values(n)))) {
        let (a, b) = pair;
        match spearman(&a, &b) {
            Ok(rho) => prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&rho)),
            Err(err) => {
                let degenerate = matches!(
                    err,
                    catebench_core::numerics::NumericsError::ConstantInput { .. }
                );
                prop_assert!(degenerate, "unexpected error: {}", err);
            }
        }
    }

    #[test]
    fn spearman_is_monotone_invariant_and_antisymmetric(
        pair in (3usize..30).prop_flat_map(|n| (grid_values(n), grid_values(n)))
    ) {
        let (a, b) = pair;
        prop_assume!(spearman(&a, &b).is_ok());
        let rho = spearman(&a, &b).unwrap();

        // Doubling is strictly increasing and exact, so ranks cannot move.
        let doubled: Vec<f64> = b.iter().map(|v| 2.0 * v).collect();
        prop_assert_eq!(rho, spearman(&a, &doubled).unwrap());

        let negated: Vec<f64> = b.iter().map(|v| -v).collect();
        prop_assert!((rho + spearman(&a, &negated).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn spearman_of_a_vector_with_itself_is_one(a in (2usize..30).prop_flat_map(grid_values)) {
        prop_assume!(a.iter().any(|&v| v != a[0]));
        prop_assert!((spearman(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kfold_partitions_every_index_exactly_once(
        n in 2usize..200,
        k in 2usize..10,
        seed in any::<u64>(),
    ) {
        prop_assume!(k <= n);
        let rng = RngStream::new(seed);
        let folds = kfold(n, k, &rng).unwrap();
        prop_assert_eq!(folds.len(), k);

        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());

        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        let min = *sizes.iter().min().unwrap();
        let max = *sizes.iter().max().unwrap();
        prop_assert!(min >= 1 && max - min <= 1);

        prop_assert_eq!(folds, kfold(n, k, &RngStream::new(seed)).unwrap());
    }

    #[test]
    fn solve_spd_solutions_satisfy_the_system(
        dim in 1usize..6,
        entries in prop::collection::vec(-3.0f64..3.0, 36),
        rhs in prop::collection::vec(-5.0f64..5.0, 6),
    ) {
        // A = B^T B + I is symmetric positive definite for any B.
        let b_mat = Matrix::from_vec(dim, dim, entries[..dim * dim].to_vec()).unwrap();
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                let mut dot = 0.0;
                for r in 0..dim {
                    dot += b_mat.get(r, i) * b_mat.get(r, j);
                }
                a[i * dim + j] = dot + if i == j { 1.0 } else { 0.0 };
            }
        }
        let a = Matrix::from_vec(dim, dim, a).unwrap();
        let b = &rhs[..dim];

        let x = solve_spd(&a, b).unwrap();
        for (i, &rhs_i) in b.iter().enumerate() {
            let row_dot: f64 = (0..dim).map(|j| a.get(i, j) * x[j]).sum();
            prop_assert!((row_dot - rhs_i).abs() < 1e-8 * (1.0 + rhs_i.abs()));
        }
    }

    #[test]
    fn standardize_centers_columns_and_replays_its_transform(
        rows in 2usize..20,
        cols in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut rng = RngStream::new(seed).rng();
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| rand::Rng::random_range(&mut rng, -50.0..50.0))
            .collect();
        let x = Matrix::from_vec(rows, cols, data).unwrap();
        let std = standardize(&x).unwrap();

        for col in 0..cols {
            let mean: f64 = std.data.column(col).iter().sum::<f64>() / rows as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!(std.scales[col] > 0.0);
        }
        let replayed = std.apply(&x).unwrap();
        prop_assert_eq!(replayed.data(), std.data.data());
    }
}

// ───────────────────────── metric layer ─────────────────────────

proptest! {
    #[test]
    fn oracle_pehe_is_a_nonnegative_quadratic_gap(
        tau in (2usize..20).prop_flat_map(|n| finite_values(n, 10.0)),
        shift in -5.0f64..5.0,
    ) {
        let exact = oracle_pehe(&tau, &tau).unwrap();
        prop_assert_eq!(exact.value, 0.0);
        prop_assert_eq!(exact.n_used, tau.len());

        let shifted: Vec<f64> = tau.iter().map(|t| t + shift).collect();
        let off = oracle_pehe(&shifted, &tau).unwrap();
        prop_assert!(off.value >= 0.0);
        prop_assert!((off.value - shift * shift).abs() < 1e-9);
    }

    #[test]
    fn clipping_keeps_exactly_the_interior(
        pi in (1usize..40).prop_flat_map(|n| probabilities(n, 0.001)),
        alpha in 0.01f64..0.49,
    ) {
        match clip_rows(&pi, alpha) {
            Ok(rows) => {
                for (i, &p) in pi.iter().enumerate() {
                    let interior = p > alpha && p < 1.0 - alpha;
                    prop_assert_eq!(rows.contains(&i), interior);
                }
            }
            Err(ScoresError::AllRowsClipped { .. }) => {
                prop_assert!(pi.iter().all(|&p| p <= alpha || p >= 1.0 - alpha));
            }
            Err(other) => prop_assert!(false, "unexpected error: {other}"),
        }
    }

    #[test]
    fn clipped_metrics_match_their_parents_on_interior_propensities(
        parts in context_parts(0.2)
    ) {
        let ctx = build_context(&parts, PolicyDirection::HigherIsBetter);
        let pairs = [
            (MetricName::ValueDrClip, MetricName::ValueDr),
            (MetricName::TauIptwClip, MetricName::TauIptw),
            (MetricName::TauDrClip, MetricName::TauDr),
            (MetricName::InfluenceClip, MetricName::Influence),
        ];
        // Propensities live in [0.2, 0.8], so alpha = 0.1 clips nothing.
        for (clipped, plain) in pairs {
            let c = evaluate_metric(
                &MetricDescriptor::new(clipped, Some(0.1)).unwrap(),
                &parts.t_hat,
                &ctx,
            )
            .unwrap();
            let p = evaluate_metric(
                &MetricDescriptor::new(plain, None).unwrap(),
                &parts.t_hat,
                &ctx,
            )
            .unwrap();
            prop_assert_eq!(c.value.to_bits(), p.value.to_bits());
            prop_assert_eq!(c.n_used, p.n_used);
        }
    }

    #[test]
    fn dr_collapses_to_iptw_without_a_plug_in_outcome_model(
        parts in context_parts(0.05)
    ) {
        let mut zeroed = parts.clone();
        zeroed.s0 = vec![0.0; parts.w.len()];
        zeroed.s1 = vec![0.0; parts.w.len()];
        let ctx = build_context(&zeroed, PolicyDirection::HigherIsBetter);

        let dr = tau_dr_score(&parts.t_hat, &ctx, None).unwrap();
        let ipw = tau_iptw_score(&parts.t_hat, &ctx, None).unwrap();
        prop_assert_eq!(dr.value.to_bits(), ipw.value.to_bits());
    }

    #[test]
    fn value_treats_a_flipped_policy_like_a_negated_effect(
        parts in context_parts(0.05)
    ) {
        let higher = build_context(&parts, PolicyDirection::HigherIsBetter);
        let lower = build_context(&parts, PolicyDirection::LowerIsBetter);
        let negated: Vec<f64> = parts.t_hat.iter().map(|t| -t).collect();

        let a = value_score(&parts.t_hat, &lower).unwrap();
        let b = value_score(&negated, &higher).unwrap();
        prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn every_observational_metric_is_finite_on_interior_contexts(
        parts in context_parts(0.05)
    ) {
        let ctx = build_context(&parts, PolicyDirection::HigherIsBetter);
        for name in MetricName::observational() {
            let desc = MetricDescriptor::new(name, None).unwrap();
            let score = evaluate_metric(&desc, &parts.t_hat, &ctx).unwrap();
            prop_assert!(score.value.is_finite(), "{name:?} was not finite");
            prop_assert!(score.n_used > 0 && score.n_used <= parts.w.len());
        }
    }
}

// ───────────────────────── aggregation ─────────────────────────

proptest! {
    #[test]
    fn best_set_members_achieve_the_optimum(
        values in prop::collection::vec(-100i32..100, 1..20),
        maximize in any::<bool>(),
    ) {
        let column: Vec<(String, f64)> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| (format!("e{i}"), f64::from(v)))
            .collect();
        let orientation = if maximize { Orientation::Maximize } else { Orientation::Minimize };
        let best = best_set(&column, orientation);
        prop_assert!(!best.is_empty());

        let opt = values
            .iter()
            .map(|&v| f64::from(v))
            .fold(if maximize { f64::NEG_INFINITY } else { f64::INFINITY }, |acc, v| {
                if maximize { acc.max(v) } else { acc.min(v) }
            });
        for (label, value) in &column {
            prop_assert_eq!(best.contains(label), *value == opt);
        }
    }

    #[test]
    fn win_rates_are_rank_statistics(values in prop::collection::vec(-100i32..100, 1..20)) {
        let floats: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
        let rates = win_rate(&floats);
        prop_assert_eq!(rates.len(), floats.len());
        let k = floats.len();

        for (i, &rate) in rates.iter().enumerate() {
            prop_assert!((0.0..=1.0).contains(&rate));
            if k > 1 {
                let not_worse = floats
                    .iter()
                    .enumerate()
                    .filter(|&(j, &other)| j != i && floats[i] <= other)
                    .count();
                prop_assert_eq!(rate, not_worse as f64 / (k - 1) as f64);
            } else {
                prop_assert_eq!(rate, 1.0);
            }
        }

        // Equal inputs must earn equal rates.
        for i in 0..k {
            for j in 0..k {
                if floats[i] == floats[j] {
                    prop_assert_eq!(rates[i], rates[j]);
                }
            }
        }
    }

    #[test]
    fn normalized_pehe_is_defined_exactly_on_positive_oracles(
        metric in 0.0f64..100.0,
        oracle in -10.0f64..100.0,
    ) {
        match normalized_pehe(metric, oracle) {
            Some(excess) => {
                prop_assert!(oracle > 0.0);
                prop_assert!((excess - (metric - oracle) / oracle).abs() < 1e-12);
                if metric >= oracle {
                    prop_assert!(excess >= 0.0);
                }
            }
            None => prop_assert!(oracle <= 0.0),
        }
    }
}

// ───────────────────────── persistence ─────────────────────────

fn label_strategy(pattern: &'static str) -> impl Strategy<Value = String> {
    prop::string::string_regex(pattern).unwrap()
}

proptest! {
    #[test]
    fn raw_result_tables_survive_a_csv_round_trip(
        rows in prop::collection::vec(
            (
                label_strategy("[a-z]{1,6}/[a-z]{1,6}"),
                0u64..100,
                label_strategy("[a-z]{1,3}\\|[a-z]{1,5}\\|[a-z0-9=;.]{1,8}"),
                prop::sample::select(MetricName::ALL.to_vec()),
                any::<f64>().prop_filter("finite", |v| v.is_finite()),
                0usize..10_000,
            ),
            0..25,
        )
    ) {
        let raw = RawResults {
            rows: rows
                .into_iter()
                .map(|(dataset, seed, estimator, metric, value, n_used)| RawRow {
                    dataset,
                    seed,
                    estimator,
                    metric,
                    value,
                    n_used,
                })
                .collect(),
            skips: Vec::new(),
            failures: Vec::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.csv");
        raw.write_csv(&path).unwrap();
        let back = RawResults::read_csv(&path).unwrap();
        prop_assert_eq!(raw, back);
    }
}
