//! End-to-end benchmark orchestration.
//!
//! A [`BenchConfig`] names datasets (synthetic processes or CSV files),
//! seeds, the estimator bank, and the metric list. [`run`] executes every
//! (dataset, seed) cell — generate or load, filter, split, fit nuisances,
//! build the bank, score — into a [`RawResults`] table, [`build_report`]
//! condenses that table into the aggregate views, and [`emit`] writes both
//! to disk. The whole path is deterministic: the same config produces the
//! same bytes.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{
    self, DatagenError, Dataset, DgpSpec, ObservationalDataset, SplitPair,
    DEFAULT_HETEROGENEITY_THRESHOLD,
};
use crate::learners::{build_bank, CateEstimatorKind, LearnersError, NuisanceSet};
use crate::models::{
    default_nuisance_candidates, final_model_bank, ModelsError, RegressorSpec, SelectionBudget,
    DEFAULT_PROPENSITY_EPSILON,
};
use crate::numerics::{NumericsError, RngStream};
use crate::scores::{
    evaluate_metric, oracle_pehe, MetricContext, MetricDescriptor, MetricName, PolicyDirection,
    ScoresError, DEFAULT_CLIP_ALPHA,
};

mod aggregate;
mod results;

pub use aggregate::{
    best_set, build_report, normalized_pehe, rank_corr, win_rate, BenchmarkReport, FrequencyRow,
    FrequencyTable, MetricTable, RunCounts, TableRow,
};
pub use results::{FailureRecord, RawResults, RawRow, SkipRecord};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {reason}")]
    Config { reason: String },

    #[error("cannot read config {path}: {source}")]
    ConfigFile {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot parse config {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },

    #[error(transparent)]
    Data(#[from] DatagenError),

    #[error(transparent)]
    Model(#[from] ModelsError),

    #[error(transparent)]
    Learner(#[from] LearnersError),

    #[error(transparent)]
    Score(#[from] ScoresError),

    #[error(transparent)]
    Numerics(#[from] NumericsError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },

    #[error("malformed results: {reason}")]
    MalformedResults { reason: String },
}

impl PipelineError {
    /// Whether the error is a problem with the configuration itself, as
    /// opposed to the data or the run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            PipelineError::Config { .. }
                | PipelineError::ConfigFile { .. }
                | PipelineError::ConfigParse { .. }
        )
    }
}

/// One dataset entry: a synthetic process to draw per seed, or a CSV file.
///
/// Exactly one of `dgp` (with `n`) and `file` must be set. The dataset's
/// report id is `group/name`; aggregate tables have one column per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub group: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dgp: Option<DgpSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    /// Whether `file` carries counterfactual columns.
    #[serde(default)]
    pub has_oracle: bool,
}

impl DatasetConfig {
    pub fn id(&self) -> String {
        format!("{}/{}", self.group, self.name)
    }

    fn validate(&self) -> Result<(), PipelineError> {
        let bad = |reason: String| Err(PipelineError::Config { reason });
        if self.group.is_empty() || self.name.is_empty() {
            return bad("dataset group and name must be non-empty".into());
        }
        if self.group.contains('/') || self.name.contains('/') {
            return bad(format!("dataset id parts may not contain `/`: {}", self.id()));
        }
        if self.group.contains(',') || self.name.contains(',') {
            return bad(format!("dataset id parts may not contain `,`: {}", self.id()));
        }
        match (&self.dgp, self.n, &self.file) {
            (Some(spec), Some(_), None) => {
                spec.validate()?;
                Ok(())
            }
            (Some(_), None, None) => bad(format!("dataset {} has a dgp but no n", self.id())),
            (None, _, Some(_)) => Ok(()),
            (None, _, None) => bad(format!("dataset {} needs a dgp or a file", self.id())),
            (Some(_), _, Some(_)) => {
                bad(format!("dataset {} has both a dgp and a file", self.id()))
            }
        }
    }
}

/// Everything a benchmark run depends on. Loads from TOML; unknown keys are
/// rejected, missing keys take the defaults documented per field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// One run per dataset per seed.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,

    /// Fraction of rows used for training (nuisances and estimators);
    /// the rest is the validation split the metrics see.
    #[serde(default = "default_split_fraction")]
    pub split_fraction: f64,

    /// Hyperparameter grid resolution for the final-model bank.
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,

    /// Estimator kinds to include in the bank.
    #[serde(default = "default_kinds")]
    pub kinds: Vec<CateEstimatorKind>,

    /// Metric columns to evaluate.
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricName>,

    /// Propensity threshold shared by all `*_clip` metrics in this run.
    #[serde(default = "default_clip_alpha")]
    pub clip_alpha: f64,

    #[serde(default)]
    pub policy: PolicyDirection,

    /// Minimum variance of the true effects; cells below it are skipped.
    #[serde(default = "default_heterogeneity_threshold")]
    pub heterogeneity_threshold: f64,

    /// Probability floor applied to every propensity prediction.
    #[serde(default = "default_propensity_epsilon")]
    pub propensity_epsilon: f64,

    /// Cross-validation budget for nuisance model selection.
    #[serde(default)]
    pub budget: SelectionBudget,

    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,

    #[serde(rename = "dataset")]
    pub datasets: Vec<DatasetConfig>,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_split_fraction() -> f64 {
    0.8
}

fn default_grid_size() -> usize {
    1
}

fn default_kinds() -> Vec<CateEstimatorKind> {
    vec![
        CateEstimatorKind::S,
        CateEstimatorKind::T,
        CateEstimatorKind::ProjectedS,
        CateEstimatorKind::X,
        CateEstimatorKind::Dr,
        CateEstimatorKind::R,
    ]
}

fn default_metrics() -> Vec<MetricName> {
    MetricName::ALL.to_vec()
}

fn default_clip_alpha() -> f64 {
    DEFAULT_CLIP_ALPHA
}

fn default_heterogeneity_threshold() -> f64 {
    DEFAULT_HETEROGENEITY_THRESHOLD
}

fn default_propensity_epsilon() -> f64 {
    DEFAULT_PROPENSITY_EPSILON
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("bench-out")
}

impl BenchConfig {
    /// A config over the given datasets with every other field defaulted.
    pub fn new(datasets: Vec<DatasetConfig>) -> Self {
        Self {
            seeds: default_seeds(),
            split_fraction: default_split_fraction(),
            grid_size: default_grid_size(),
            kinds: default_kinds(),
            metrics: default_metrics(),
            clip_alpha: default_clip_alpha(),
            policy: PolicyDirection::default(),
            heterogeneity_threshold: default_heterogeneity_threshold(),
            propensity_epsilon: default_propensity_epsilon(),
            budget: SelectionBudget::default(),
            output_dir: default_output_dir(),
            datasets,
        }
    }

    /// Parses a TOML config file. Relative dataset file paths are resolved
    /// against the config file's directory and must exist.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::ConfigFile {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: Self =
            toml::from_str(&text).map_err(|source| PipelineError::ConfigParse {
                path: path.to_path_buf(),
                source: Box::new(source),
            })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for ds in &mut config.datasets {
            if let Some(file) = &ds.file {
                let resolved = if file.is_relative() {
                    base.join(file)
                } else {
                    file.clone()
                };
                if !resolved.exists() {
                    return Err(PipelineError::Config {
                        reason: format!(
                            "dataset {} references missing file {}",
                            ds.id(),
                            resolved.display()
                        ),
                    });
                }
                ds.file = Some(resolved);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |reason: String| Err(PipelineError::Config { reason });
        if self.datasets.is_empty() {
            return bad("at least one [[dataset]] is required".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad(format!(
                "split_fraction must lie in (0, 1), got {}",
                self.split_fraction
            ));
        }
        if self.grid_size == 0 {
            return bad("grid_size must be at least 1".into());
        }
        if self.kinds.is_empty() {
            return bad("at least one estimator kind is required".into());
        }
        if self.metrics.is_empty() {
            return bad("at least one metric is required".into());
        }
        if !(self.clip_alpha > 0.0 && self.clip_alpha < 0.5) {
            return bad(format!(
                "clip_alpha must lie in (0, 0.5), got {}",
                self.clip_alpha
            ));
        }
        if !(self.heterogeneity_threshold >= 0.0 && self.heterogeneity_threshold.is_finite()) {
            return bad(format!(
                "heterogeneity_threshold must be a non-negative number, got {}",
                self.heterogeneity_threshold
            ));
        }
        if !(self.propensity_epsilon > 0.0 && self.propensity_epsilon < 0.5) {
            return bad(format!(
                "propensity_epsilon must lie in (0, 0.5), got {}",
                self.propensity_epsilon
            ));
        }
        self.budget.validate()?;
        for pair in [
            ("seed", dupes(&self.seeds)),
            ("kind", dupes(&self.kinds)),
            ("metric", dupes(&self.metrics)),
            ("dataset id", dupes(&self.datasets.iter().map(DatasetConfig::id).collect::<Vec<_>>())),
        ] {
            if let (what, Some(which)) = pair {
                return bad(format!("duplicate {what}: {which}"));
            }
        }
        for ds in &self.datasets {
            ds.validate()?;
        }
        Ok(())
    }

    fn descriptors(&self) -> Result<Vec<MetricDescriptor>, PipelineError> {
        self.metrics
            .iter()
            .map(|&name| {
                let alpha = name.is_clipped().then_some(self.clip_alpha);
                MetricDescriptor::new(name, alpha).map_err(PipelineError::from)
            })
            .collect()
    }
}

fn dupes<T: std::fmt::Debug + PartialEq>(items: &[T]) -> Option<String> {
    for (i, item) in items.iter().enumerate() {
        if items[..i].contains(item) {
            return Some(format!("{item:?}"));
        }
    }
    None
}

/// Runs every (dataset, seed) cell of the benchmark.
///
/// Skipped cells (insufficient effect heterogeneity) and per-estimator
/// failures are recorded in the result rather than aborting the run; hard
/// errors — bad config, unreadable files, a nuisance stage that cannot
/// produce any model — abort.
pub fn run(config: &BenchConfig) -> Result<RawResults, PipelineError> {
    config.validate()?;
    let final_specs = final_model_bank(config.grid_size)?;
    let candidates = default_nuisance_candidates();
    let descriptors = config.descriptors()?;

    let cells: Vec<(&DatasetConfig, u64)> = config
        .datasets
        .iter()
        .flat_map(|ds| config.seeds.iter().map(move |&seed| (ds, seed)))
        .collect();

    let outcomes: Vec<CellOutcome> = cells
        .into_par_iter()
        .map(|(ds, seed)| run_cell(config, ds, seed, &candidates, &final_specs, &descriptors))
        .collect::<Result<Vec<CellOutcome>, PipelineError>>()?;

    let mut results = RawResults::default();
    for outcome in outcomes {
        results.rows.extend(outcome.rows);
        results.skips.extend(outcome.skip);
        results.failures.extend(outcome.failures);
    }
    results.validate()?;
    Ok(results)
}

struct CellOutcome {
    rows: Vec<RawRow>,
    skip: Option<SkipRecord>,
    failures: Vec<FailureRecord>,
}

fn run_cell(
    config: &BenchConfig,
    ds: &DatasetConfig,
    seed: u64,
    candidates: &[RegressorSpec],
    final_specs: &[RegressorSpec],
    descriptors: &[MetricDescriptor],
) -> Result<CellOutcome, PipelineError> {
    let id = ds.id();
    let stream = RngStream::new(seed).child(&id);

    let data: Dataset = match (&ds.dgp, &ds.file) {
        (Some(spec), None) => {
            let n = ds.n.expect("validate() checked dgp datasets carry n");
            datagen::generate(spec, n, &stream.child("gen"))?.into()
        }
        (None, Some(path)) => datagen::read_csv(path, ds.has_oracle)?,
        _ => unreachable!("validate() checked exactly one source"),
    };

    if let Some(oracle) = data.oracle() {
        if !datagen::heterogeneity_ok(oracle, config.heterogeneity_threshold) {
            return Ok(CellOutcome {
                rows: Vec::new(),
                skip: Some(SkipRecord {
                    dataset: id,
                    seed,
                    reason: format!(
                        "true effect variance below the heterogeneity threshold {}",
                        config.heterogeneity_threshold
                    ),
                }),
                failures: Vec::new(),
            });
        }
    }

    #[allow(clippy::large_enum_variant)]
    enum Split {
        Oracle(SplitPair<crate::datagen::OracleDataset>),
        Plain(SplitPair<ObservationalDataset>),
    }
    let split = match data {
        Dataset::Oracle(o) => {
            Split::Oracle(datagen::split_oracle(&o, config.split_fraction, &stream.child("split"))?)
        }
        Dataset::Observational(o) => {
            Split::Plain(datagen::split(&o, config.split_fraction, &stream.child("split"))?)
        }
    };
    let (train, val, val_tau): (&ObservationalDataset, &ObservationalDataset, Option<&[f64]>) =
        match &split {
            Split::Oracle(sp) => (
                sp.train.observational(),
                sp.val.observational(),
                Some(sp.val.tau()),
            ),
            Split::Plain(sp) => (&sp.train, &sp.val, None),
        };

    let nuisances = NuisanceSet::fit(
        train,
        &config.kinds,
        candidates,
        &config.budget,
        config.propensity_epsilon,
        &stream.child("nuis"),
    )?;
    let context = MetricContext::fit(
        train,
        val,
        candidates,
        &config.budget,
        config.propensity_epsilon,
        config.policy,
        &stream.child("metric"),
    )?;
    let bank = build_bank(&nuisances, train, &config.kinds, final_specs, &stream.child("bank"))?;

    let evaluated: Vec<(Vec<RawRow>, Vec<FailureRecord>)> = bank
        .par_iter()
        .map(|member| {
            let mut rows = Vec::new();
            let mut failures = Vec::new();
            let mut fail = |error: String| {
                failures.push(FailureRecord {
                    dataset: id.clone(),
                    seed,
                    estimator: member.label.clone(),
                    error,
                });
            };
            let estimator = match &member.fitted {
                Ok(est) => est,
                Err(e) => {
                    fail(format!("fit: {e}"));
                    return (rows, failures);
                }
            };
            let t_hat = match estimator.predict_cate(val.x()) {
                Ok(preds) => preds,
                Err(e) => {
                    fail(format!("predict: {e}"));
                    return (rows, failures);
                }
            };
            for desc in descriptors {
                let scored = if desc.name == MetricName::OraclePehe {
                    let Some(tau) = val_tau else { continue };
                    oracle_pehe(&t_hat, tau)
                } else {
                    evaluate_metric(desc, &t_hat, &context)
                };
                match scored {
                    Ok(score) => rows.push(RawRow {
                        dataset: id.clone(),
                        seed,
                        estimator: member.label.clone(),
                        metric: score.metric,
                        value: score.value,
                        n_used: score.n_used,
                    }),
                    Err(e) => fail(format!("{}: {e}", desc.name.as_str())),
                }
            }
            (rows, failures)
        })
        .collect();

    let mut outcome = CellOutcome {
        rows: Vec::new(),
        skip: None,
        failures: Vec::new(),
    };
    for (rows, failures) in evaluated {
        outcome.rows.extend(rows);
        outcome.failures.extend(failures);
    }
    Ok(outcome)
}

/// Per (metric, estimator kind): the share of benchmark cells in which that
/// kind appears in the metric's chosen set.
pub fn top_frequency(raw: &RawResults) -> Result<FrequencyTable, PipelineError> {
    Ok(build_report(raw)?.top_frequency)
}

/// Writes the raw table, the JSON report, one CSV per aggregate table, and
/// a plain-text summary into `dir`. Same inputs, same bytes.
pub fn emit(
    raw: &RawResults,
    report: &BenchmarkReport,
    dir: &Path,
) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
        context: format!("creating {}", dir.display()),
        source,
    })?;
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|source| PipelineError::Io {
            context: format!("writing {}", path.display()),
            source,
        })
    };
    raw.write_csv(&dir.join("raw_results.csv"))?;
    write("report.json", report.to_json())?;
    write("normalized_pehe.csv", report.normalized_pehe.to_csv())?;
    write("absolute_pehe.csv", report.absolute_pehe.to_csv())?;
    write("win_rate.csv", report.win_rate.to_csv())?;
    write("rank_correlation.csv", report.rank_correlation.to_csv())?;
    write("top_frequency.csv", report.top_frequency.to_csv())?;
    write("summary.txt", report.to_summary())?;
    Ok(())
}
