//! The raw per-(dataset, seed, estimator, metric) result table and its CSV
//! round trip.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::scores::MetricName;

use super::PipelineError;

/// One evaluated metric for one estimator on one benchmark cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub dataset: String,
    pub seed: u64,
    pub estimator: String,
    pub metric: MetricName,
    pub value: f64,
    pub n_used: usize,
}

/// A benchmark cell dropped before any estimator ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub dataset: String,
    pub seed: u64,
    pub reason: String,
}

/// An estimator that failed to fit or predict in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub dataset: String,
    pub seed: u64,
    pub estimator: String,
    pub error: String,
}

/// Everything a benchmark run produced: the result table plus the skip and
/// failure records explaining any missing rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawResults {
    pub rows: Vec<RawRow>,
    pub skips: Vec<SkipRecord>,
    pub failures: Vec<FailureRecord>,
}

impl RawResults {
    /// Checks that no (dataset, seed, estimator, metric) key appears twice.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut seen = std::collections::BTreeSet::new();
        for row in &self.rows {
            let key = (
                row.dataset.as_str(),
                row.seed,
                row.estimator.as_str(),
                row.metric,
            );
            if !seen.insert(key) {
                return Err(PipelineError::MalformedResults {
                    reason: format!(
                        "duplicate row for {}/{}/{}/{}",
                        row.dataset,
                        row.seed,
                        row.estimator,
                        row.metric.as_str()
                    ),
                });
            }
        }
        Ok(())
    }

    /// Renders the result table as CSV, one line per row, stable order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,seed,estimator,metric,value,n_used\n");
        for row in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                row.dataset,
                row.seed,
                row.estimator,
                row.metric.as_str(),
                fmt_f64(row.value),
                row.n_used
            )
            .expect("writing to a String cannot fail");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), PipelineError> {
        std::fs::write(path, self.to_csv()).map_err(|source| PipelineError::Io {
            context: format!("writing {}", path.display()),
            source,
        })
    }

    /// Reads a table written by [`RawResults::write_csv`]. Skip and failure
    /// records live in the report, not the CSV, so they come back empty.
    pub fn read_csv(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            context: format!("reading {}", path.display()),
            source,
        })?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        if header != "dataset,seed,estimator,metric,value,n_used" {
            return Err(PipelineError::MalformedResults {
                reason: format!("unexpected header `{header}` in {}", path.display()),
            });
        }
        let mut rows = Vec::new();
        for (idx, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(PipelineError::MalformedResults {
                    reason: format!("line {}: expected 6 fields, got {}", idx + 2, fields.len()),
                });
            }
            let parse_err = |what: &str| PipelineError::MalformedResults {
                reason: format!("line {}: bad {what} `{}`", idx + 2, line),
            };
            let metric: MetricName = serde_json::from_value(serde_json::Value::String(
                fields[3].to_string(),
            ))
            .map_err(|_| parse_err("metric"))?;
            rows.push(RawRow {
                dataset: fields[0].to_string(),
                seed: fields[1].parse().map_err(|_| parse_err("seed"))?,
                estimator: fields[2].to_string(),
                metric,
                value: fields[4].parse().map_err(|_| parse_err("value"))?,
                n_used: fields[5].parse().map_err(|_| parse_err("n_used"))?,
            });
        }
        let results = Self {
            rows,
            skips: Vec::new(),
            failures: Vec::new(),
        };
        results.validate()?;
        Ok(results)
    }
}

/// Shortest representation that parses back to the same bits.
pub(super) fn fmt_f64(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains(['.', 'e', 'n', 'i']) {
        s.push_str(".0");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RawResults {
        RawResults {
            rows: vec![
                RawRow {
                    dataset: "synthetic/lin".into(),
                    seed: 0,
                    estimator: "dr|linear|-".into(),
                    metric: MetricName::TauDr,
                    value: 0.125,
                    n_used: 400,
                },
                RawRow {
                    dataset: "synthetic/lin".into(),
                    seed: 0,
                    estimator: "dr|linear|-".into(),
                    metric: MetricName::OraclePehe,
                    value: 1.0 / 3.0,
                    n_used: 400,
                },
            ],
            skips: vec![],
            failures: vec![],
        }
    }

    #[test]
    fn csv_round_trips_bit_exactly() {
        let results = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw_results.csv");
        results.write_csv(&path).unwrap();
        let back = RawResults::read_csv(&path).unwrap();
        assert_eq!(back.rows, results.rows);
        // Writing what we read reproduces the file byte for byte.
        let again = dir.path().join("again.csv");
        back.write_csv(&again).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&again).unwrap()
        );
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let mut results = sample();
        results.rows.push(results.rows[0].clone());
        assert!(matches!(
            results.validate(),
            Err(PipelineError::MalformedResults { .. })
        ));
    }

    #[test]
    fn malformed_lines_are_reported_with_context() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "dataset,seed,estimator,metric,value,n_used\na,0,e,not_a_metric,1.0,3\n").unwrap();
        let err = RawResults::read_csv(&path).unwrap_err();
        assert!(err.to_string().contains("bad metric"));
        std::fs::write(&path, "wrong,header\n").unwrap();
        assert!(RawResults::read_csv(&path).is_err());
    }

    #[test]
    fn float_formatting_round_trips_edge_values() {
        for v in [0.0, -0.0, 1.0, -1.5, 1e-300, 12345.678901234567, f64::MIN_POSITIVE] {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(2.0), "2.0");
        assert_eq!(fmt_f64(0.5), "0.5");
    }
}
