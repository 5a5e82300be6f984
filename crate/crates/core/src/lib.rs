//! Synthetic benchmarking for treatment-effect estimator selection.
//!
//! The library builds confounded observational datasets with known
//! counterfactuals, fits a bank of conditional average treatment effect
//! (CATE) estimators on a training split, and scores every estimator with a
//! family of observational model-selection metrics on a validation split.
//! Because the data are synthetic, the true effect is available and each
//! metric's ranking can be compared against the oracle precision in
//! estimating heterogeneous effects (PEHE).
//!
//! Modules, bottom to top:
//!
//! * [`numerics`]: dense matrices, seeded random streams, and the handful of
//!   statistical primitives everything else is built on.
//! * [`datagen`]: data-generating processes, train/validation splitting, and
//!   CSV round-tripping for datasets.
//! * [`models`]: regression and propensity models with cross-validated
//!   hyperparameter selection.
//! * [`learners`]: meta-learners that turn nuisance models into CATE
//!   estimators.
//! * [`scores`]: the observational metrics and the oracle PEHE.
//! * [`pipeline`]: benchmark configuration, execution, aggregation into
//!   report tables, and deterministic emission to disk.

pub mod datagen;
pub mod learners;
pub mod models;
pub mod numerics;
pub mod pipeline;
pub mod scores;

pub use datagen::{DgpFamily, DgpSpec, ObservationalDataset, OracleDataset, SplitPair};
pub use learners::{CateEstimator, CateEstimatorKind, NuisanceSet};
pub use models::{PropensityModel, RegressorModel, RegressorSpec, SelectionBudget};
pub use numerics::{Matrix, RngStream};
pub use pipeline::{BenchConfig, BenchmarkReport, RawResults};
pub use scores::{MetricContext, MetricDescriptor, MetricName, Orientation, ScoreValue};
