//! Synthetic data-generating processes and dataset plumbing.
//!
//! A generated dataset is confounded: treatment assignment depends on the
//! covariates through a propensity score, and the two potential outcomes
//! share a baseline surface. Because generation keeps the counterfactuals,
//! oracle quantities (true effects, propensities) stay available for
//! evaluation while estimators only ever see the observational columns.

mod io;

pub use io::{read_csv, write_csv};

use serde::{Deserialize, Serialize};

use crate::numerics::{Matrix, NumericsError, RngStream};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Default sample-variance threshold under which a dataset's treatment
/// effect is considered effectively constant.
pub const DEFAULT_HETEROGENEITY_THRESHOLD: f64 = 0.01;

/// Attempts before treatment drawing or splitting gives up.
const MAX_ATTEMPTS: usize = 100;

/// Propensities are kept this far inside (0, 1) even when the configured
/// overlap floor is smaller, so downstream inverse weighting stays finite.
const PROPENSITY_MARGIN: f64 = 1e-12;

/// Errors from data generation, splitting, and dataset I/O.
#[derive(Debug, Error)]
pub enum DatagenError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),

    #[error("dataset needs at least {min} rows, got {n}")]
    TooSmall { n: usize, min: usize },

    #[error("treatment column must contain both classes")]
    SingleClass,

    #[error("{context}: length {found} does not match {expected} rows")]
    LengthMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{context}: encountered a non-finite value")]
    NonFinite { context: &'static str },

    #[error("propensity at row {row} must lie strictly inside (0,1), got {value}")]
    PropensityOutOfRange { row: usize, value: f64 },

    #[error("outcome at row {row} does not match the counterfactual for its arm")]
    InconsistentOutcome { row: usize },

    #[error("effect at row {row} does not equal mu1 - mu0")]
    InconsistentEffect { row: usize },

    #[error("invalid dgp spec: {reason}")]
    BadSpec { reason: String },

    #[error("could not draw both treatment classes in {attempts} attempts")]
    DegenerateTreatment { attempts: usize },

    #[error("could not split with both classes on both sides in {attempts} attempts")]
    DegenerateSplit { attempts: usize },

    #[error("split fraction {fraction} leaves an empty side for n={n}")]
    BadSplitFraction { fraction: f64, n: usize },

    #[error("{path} line {line}: {reason}")]
    MalformedCsv {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("i/o on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

// ─────────────────────────── dataset types ───────────────────────────

/// Covariates, binary treatment, and observed outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationalDataset {
    x: Matrix,
    w: Vec<bool>,
    y: Vec<f64>,
}

impl ObservationalDataset {
    /// Validates lengths, finiteness, a minimum of two rows, and the
    /// presence of both treatment classes.
    pub fn new(x: Matrix, w: Vec<bool>, y: Vec<f64>) -> Result<Self, DatagenError> {
        let n = x.rows();
        if n < 2 {
            return Err(DatagenError::TooSmall { n, min: 2 });
        }
        check_len("treatment", n, w.len())?;
        check_len("outcome", n, y.len())?;
        check_finite("outcome", &y)?;
        if w.iter().all(|&t| t) || w.iter().all(|&t| !t) {
            return Err(DatagenError::SingleClass);
        }
        Ok(Self { x, w, y })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn w(&self) -> &[bool] {
        &self.w
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Treatment indicators as 0/1 floats.
    pub fn w_f64(&self) -> Vec<f64> {
        self.w.iter().map(|&t| f64::from(u8::from(t))).collect()
    }

    /// Subset of rows, in the given index order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, DatagenError> {
        Self::new(
            self.x.select_rows(indices),
            indices.iter().map(|&i| self.w[i]).collect(),
            indices.iter().map(|&i| self.y[i]).collect(),
        )
    }
}

/// Observational dataset plus the counterfactual ground truth that a
/// synthetic generator can retain: both potential outcomes, both outcome
/// surfaces, the true propensity, and the true effect.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleDataset {
    obs: ObservationalDataset,
    y0: Vec<f64>,
    y1: Vec<f64>,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
    pi: Vec<f64>,
    tau: Vec<f64>,
}

impl OracleDataset {
    /// Consistency tolerance: generated data satisfies the identities
    /// exactly, but files written by other tools may carry rounding.
    const CONSISTENCY_TOL: f64 = 1e-9;

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        obs: ObservationalDataset,
        y0: Vec<f64>,
        y1: Vec<f64>,
        mu0: Vec<f64>,
        mu1: Vec<f64>,
        pi: Vec<f64>,
        tau: Vec<f64>,
    ) -> Result<Self, DatagenError> {
        let n = obs.n();
        check_len("y0", n, y0.len())?;
        check_len("y1", n, y1.len())?;
        check_len("mu0", n, mu0.len())?;
        check_len("mu1", n, mu1.len())?;
        check_len("pi", n, pi.len())?;
        check_len("tau", n, tau.len())?;
        check_finite("y0", &y0)?;
        check_finite("y1", &y1)?;
        check_finite("mu0", &mu0)?;
        check_finite("mu1", &mu1)?;
        check_finite("tau", &tau)?;
        for (row, &p) in pi.iter().enumerate() {
            if !p.is_finite() || p <= 0.0 || p >= 1.0 {
                return Err(DatagenError::PropensityOutOfRange { row, value: p });
            }
        }
        for row in 0..n {
            let arm = if obs.w[row] { y1[row] } else { y0[row] };
            if (obs.y[row] - arm).abs() > Self::CONSISTENCY_TOL * (1.0 + arm.abs()) {
                return Err(DatagenError::InconsistentOutcome { row });
            }
            let diff = mu1[row] - mu0[row];
            if (tau[row] - diff).abs() > Self::CONSISTENCY_TOL * (1.0 + diff.abs()) {
                return Err(DatagenError::InconsistentEffect { row });
            }
        }
        Ok(Self {
            obs,
            y0,
            y1,
            mu0,
            mu1,
            pi,
            tau,
        })
    }

    pub fn observational(&self) -> &ObservationalDataset {
        &self.obs
    }

    pub fn n(&self) -> usize {
        self.obs.n()
    }

    pub fn dim(&self) -> usize {
        self.obs.dim()
    }

    pub fn y0(&self) -> &[f64] {
        &self.y0
    }

    pub fn y1(&self) -> &[f64] {
        &self.y1
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    pub fn mu1(&self) -> &[f64] {
        &self.mu1
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self, DatagenError> {
        let pick = |v: &[f64]| indices.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        Self::new(
            self.obs.subset(indices)?,
            pick(&self.y0),
            pick(&self.y1),
            pick(&self.mu0),
            pick(&self.mu1),
            pick(&self.pi),
            pick(&self.tau),
        )
    }
}

/// A dataset that may or may not carry counterfactual ground truth.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Observational(ObservationalDataset),
    Oracle(OracleDataset),
}

impl Dataset {
    /// The observational view every dataset has.
    pub fn observational(&self) -> &ObservationalDataset {
        match self {
            Dataset::Observational(ds) => ds,
            Dataset::Oracle(ds) => ds.observational(),
        }
    }

    pub fn oracle(&self) -> Option<&OracleDataset> {
        match self {
            Dataset::Observational(_) => None,
            Dataset::Oracle(ds) => Some(ds),
        }
    }
}

impl From<ObservationalDataset> for Dataset {
    fn from(ds: ObservationalDataset) -> Self {
        Dataset::Observational(ds)
    }
}

impl From<OracleDataset> for Dataset {
    fn from(ds: OracleDataset) -> Self {
        Dataset::Oracle(ds)
    }
}

/// Train/validation views of one dataset.
#[derive(Debug, Clone)]
pub struct SplitPair<D> {
    pub train: D,
    pub val: D,
    pub fraction: f64,
}

// ───────────────────────────── dgp settings ─────────────────────────────

/// Shape of the treatment-effect surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DgpFamily {
    /// Constant effect: `tau(x) = effect_scale`.
    LinearConstant,
    /// Effect linear in the first covariate: `tau(x) = effect_scale * x0`.
    LinearHeterogeneous,
    /// Degree-two effect surface with unit variance at `effect_scale = 1`.
    PolynomialHeterogeneous,
    /// Sign-of-first-covariate effect: `tau(x) = ±effect_scale`.
    StepHeterogeneous,
}

impl DgpFamily {
    pub fn label(&self) -> &'static str {
        match self {
            DgpFamily::LinearConstant => "linear-constant",
            DgpFamily::LinearHeterogeneous => "linear-heterogeneous",
            DgpFamily::PolynomialHeterogeneous => "polynomial-heterogeneous",
            DgpFamily::StepHeterogeneous => "step-heterogeneous",
        }
    }
}

/// Parameters of a data-generating process.
///
/// Covariates are i.i.d. standard normal. The propensity is a sigmoid of a
/// unit-variance linear score scaled by `confounding_strength`, clipped to
/// `[overlap_floor, 1 - overlap_floor]`. Potential outcomes are the family's
/// surfaces plus independent Gaussian noise with standard deviation
/// `noise_sd` in each arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub family: DgpFamily,
    #[serde(default = "default_dim", alias = "d")]
    pub dim: usize,
    #[serde(default = "default_confounding")]
    pub confounding_strength: f64,
    #[serde(default = "default_overlap_floor")]
    pub overlap_floor: f64,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default = "default_effect_scale")]
    pub effect_scale: f64,
}

fn default_dim() -> usize {
    5
}

fn default_confounding() -> f64 {
    1.0
}

fn default_overlap_floor() -> f64 {
    0.01
}

fn default_noise_sd() -> f64 {
    1.0
}

fn default_effect_scale() -> f64 {
    1.0
}

impl DgpSpec {
    pub fn new(family: DgpFamily) -> Self {
        Self {
            family,
            dim: default_dim(),
            confounding_strength: default_confounding(),
            overlap_floor: default_overlap_floor(),
            noise_sd: default_noise_sd(),
            effect_scale: default_effect_scale(),
        }
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |reason: String| Err(DatagenError::BadSpec { reason });
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if !self.confounding_strength.is_finite() {
            return bad("confounding_strength must be finite".into());
        }
        if !(0.0..0.5).contains(&self.overlap_floor) {
            return bad(format!(
                "overlap_floor must lie in [0, 0.5), got {}",
                self.overlap_floor
            ));
        }
        if !self.noise_sd.is_finite() || self.noise_sd < 0.0 {
            return bad(format!("noise_sd must be non-negative, got {}", self.noise_sd));
        }
        if !self.effect_scale.is_finite() {
            return bad("effect_scale must be finite".into());
        }
        Ok(())
    }
}

// ─────────────────────────── generation ───────────────────────────

/// Draws a dataset of size `n` from the process described by `spec`.
///
/// Randomness comes entirely from children of `rng`: "covariates",
/// "treatment#k" for the k-th assignment attempt, and "noise0"/"noise1" for
/// the two potential-outcome noise vectors. If an assignment draw yields a
/// single treatment class it is redrawn, up to 100 attempts.
pub fn generate(spec: &DgpSpec, n: usize, rng: &RngStream) -> Result<OracleDataset, DatagenError> {
    spec.validate()?;
    if n < 20 {
        return Err(DatagenError::TooSmall { n, min: 20 });
    }
    let d = spec.dim;

    let mut cov_rng = rng.child("covariates").rng();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        data.push(cov_rng.sample::<f64, _>(StandardNormal));
    }
    let x = Matrix::from_vec(n, d, data)?;

    let floor = spec.overlap_floor.max(PROPENSITY_MARGIN);
    let pi: Vec<f64> = (0..n)
        .map(|i| sigmoid(spec.confounding_strength * confounding_score(x.row(i))).clamp(floor, 1.0 - floor))
        .collect();

    let w = draw_treatments(&pi, rng)?;

    let mut mu0 = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);
    for i in 0..n {
        let (m, t) = outcome_surfaces(spec, x.row(i));
        mu0.push(m);
        tau.push(t);
    }
    let mu1: Vec<f64> = mu0.iter().zip(&tau).map(|(m, t)| m + t).collect();

    let mut noise0_rng = rng.child("noise0").rng();
    let mut noise1_rng = rng.child("noise1").rng();
    let y0: Vec<f64> = mu0
        .iter()
        .map(|m| m + spec.noise_sd * noise0_rng.sample::<f64, _>(StandardNormal))
        .collect();
    let y1: Vec<f64> = mu1
        .iter()
        .map(|m| m + spec.noise_sd * noise1_rng.sample::<f64, _>(StandardNormal))
        .collect();

    let y: Vec<f64> = w
        .iter()
        .zip(y0.iter().zip(&y1))
        .map(|(&t, (&a, &b))| if t { b } else { a })
        .collect();

    let obs = ObservationalDataset::new(x, w, y)?;
    OracleDataset::new(obs, y0, y1, mu0, mu1, pi, tau)
}

/// Unit-variance linear score the propensity depends on.
fn confounding_score(row: &[f64]) -> f64 {
    if row.len() == 1 {
        row[0]
    } else {
        (row[0] + row[1]) / 2f64.sqrt()
    }
}

/// Baseline surface `mu0(x)` and effect surface `tau(x)` for one row.
fn outcome_surfaces(spec: &DgpSpec, row: &[f64]) -> (f64, f64) {
    let d = row.len() as f64;
    let base: f64 = row.iter().sum::<f64>() / d.sqrt();
    let e = spec.effect_scale;
    match spec.family {
        DgpFamily::LinearConstant => (base, e),
        DgpFamily::LinearHeterogeneous => (base, e * row[0]),
        DgpFamily::PolynomialHeterogeneous => {
            if row.len() >= 2 {
                // Both pieces have unit variance under standard normals.
                let curved = base + 0.5 * (row[1] * row[1] - 1.0);
                (curved, e * (row[0] * row[0] + row[1] - 1.0) / 3f64.sqrt())
            } else {
                let curved = base + 0.5 * (row[0] * row[0] - 1.0);
                (curved, e * (row[0] * row[0] - 1.0) / 2f64.sqrt())
            }
        }
        DgpFamily::StepHeterogeneous => (base, if row[0] >= 0.0 { e } else { -e }),
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli treatment draws, redrawn until both classes appear.
fn draw_treatments(pi: &[f64], rng: &RngStream) -> Result<Vec<bool>, DatagenError> {
    for attempt in 0..MAX_ATTEMPTS {
        let mut attempt_rng = rng.child_indexed("treatment", attempt).rng();
        let w: Vec<bool> = pi.iter().map(|&p| attempt_rng.random_bool(p)).collect();
        if w.iter().any(|&t| t) && w.iter().any(|&t| !t) {
            return Ok(w);
        }
    }
    Err(DatagenError::DegenerateTreatment {
        attempts: MAX_ATTEMPTS,
    })
}

// ─────────────────────────── filtering and splitting ───────────────────────────

/// Whether the true effect varies enough to make estimator ranking
/// meaningful: sample variance (denominator n-1) at or above `threshold`.
pub fn heterogeneity_ok(ds: &OracleDataset, threshold: f64) -> bool {
    sample_variance(ds.tau()) >= threshold
}

fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

/// Shuffled train/validation split with `ceil(fraction * n)` training rows.
///
/// Both sides must contain both treatment classes; the shuffle is redrawn up
/// to 100 times before giving up. The same stream always yields the same
/// split.
pub fn split(
    ds: &ObservationalDataset,
    fraction: f64,
    rng: &RngStream,
) -> Result<SplitPair<ObservationalDataset>, DatagenError> {
    let (train_idx, val_idx) = split_indices(ds.w(), fraction, rng)?;
    Ok(SplitPair {
        train: ds.subset(&train_idx)?,
        val: ds.subset(&val_idx)?,
        fraction,
    })
}

/// [`split`] for datasets carrying ground truth. The same stream picks the
/// same rows as the observational variant.
pub fn split_oracle(
    ds: &OracleDataset,
    fraction: f64,
    rng: &RngStream,
) -> Result<SplitPair<OracleDataset>, DatagenError> {
    let (train_idx, val_idx) = split_indices(ds.observational().w(), fraction, rng)?;
    Ok(SplitPair {
        train: ds.subset(&train_idx)?,
        val: ds.subset(&val_idx)?,
        fraction,
    })
}

fn split_indices(
    w: &[bool],
    fraction: f64,
    rng: &RngStream,
) -> Result<(Vec<usize>, Vec<usize>), DatagenError> {
    let n = w.len();
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DatagenError::BadSplitFraction { fraction, n });
    }
    let train_n = (fraction * n as f64).ceil() as usize;
    if train_n == 0 || train_n >= n {
        return Err(DatagenError::BadSplitFraction { fraction, n });
    }
    for attempt in 0..MAX_ATTEMPTS {
        let mut indices: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        indices.shuffle(&mut rng.child_indexed("attempt", attempt).rng());
        let mut train: Vec<usize> = indices[..train_n].to_vec();
        let mut val: Vec<usize> = indices[train_n..].to_vec();
        train.sort_unstable();
        val.sort_unstable();
        let both = |idx: &[usize]| {
            idx.iter().any(|&i| w[i]) && idx.iter().any(|&i| !w[i])
        };
        if both(&train) && both(&val) {
            return Ok((train, val));
        }
    }
    Err(DatagenError::DegenerateSplit {
        attempts: MAX_ATTEMPTS,
    })
}

fn check_len(context: &'static str, expected: usize, found: usize) -> Result<(), DatagenError> {
    if expected == found {
        Ok(())
    } else {
        Err(DatagenError::LengthMismatch {
            context,
            expected,
            found,
        })
    }
}

fn check_finite(context: &'static str, values: &[f64]) -> Result<(), DatagenError> {
    if values.iter().any(|v| !v.is_finite()) {
        Err(DatagenError::NonFinite { context })
    } else {
        Ok(())
    }
}
