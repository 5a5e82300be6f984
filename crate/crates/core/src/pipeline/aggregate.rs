//! Turning the raw result table into the report: best sets, normalized
//! PEHE, win rates, rank correlations, and top-estimator frequencies.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::learners::CateEstimatorKind;
use crate::numerics::{spearman, NumericsError};
use crate::scores::{MetricName, Orientation};

use super::results::{fmt_f64, FailureRecord, RawResults, SkipRecord};
use super::PipelineError;

/// Labels attaining the exact optimum of a metric column.
pub fn best_set(column: &[(String, f64)], orientation: Orientation) -> Vec<String> {
    let mut best = match orientation {
        Orientation::Minimize => f64::INFINITY,
        Orientation::Maximize => f64::NEG_INFINITY,
    };
    for (_, v) in column {
        if (orientation == Orientation::Minimize && *v < best)
            || (orientation == Orientation::Maximize && *v > best)
        {
            best = *v;
        }
    }
    column
        .iter()
        .filter(|(_, v)| *v == best)
        .map(|(label, _)| label.clone())
        .collect()
}

/// Relative increase of a metric's chosen-estimator PEHE over the oracle's.
/// Undefined when the oracle's best PEHE is not a positive number.
pub fn normalized_pehe(metric_best_pehe: f64, oracle_best_pehe: f64) -> Option<f64> {
    if oracle_best_pehe > 0.0 {
        Some((metric_best_pehe - oracle_best_pehe) / oracle_best_pehe)
    } else {
        None
    }
}

/// For each entry, the fraction of the *other* entries it beats or ties.
/// With nothing to compare against, a lone entry wins vacuously.
pub fn win_rate(best_pehes: &[f64]) -> Vec<f64> {
    let k = best_pehes.len();
    if k <= 1 {
        return vec![1.0; k];
    }
    best_pehes
        .iter()
        .enumerate()
        .map(|(i, &mine)| {
            let beaten = best_pehes
                .iter()
                .enumerate()
                .filter(|&(j, &theirs)| j != i && mine <= theirs)
                .count();
            beaten as f64 / (k - 1) as f64
        })
        .collect()
}

/// Spearman correlation between a metric column and the oracle column, with
/// maximize-oriented metrics negated first so +1 always means agreement.
pub fn rank_corr(
    metric_vals: &[f64],
    oracle_vals: &[f64],
    orientation: Orientation,
) -> Result<f64, NumericsError> {
    match orientation {
        Orientation::Minimize => spearman(metric_vals, oracle_vals),
        Orientation::Maximize => {
            let negated: Vec<f64> = metric_vals.iter().map(|v| -v).collect();
            spearman(&negated, oracle_vals)
        }
    }
}

/// A metric-by-group table of aggregate values; `None` marks cells that are
/// undefined rather than zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub metric: MetricName,
    pub cells: Vec<Option<f64>>,
}

impl MetricTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for c in &self.columns {
            write!(out, ",{c}").expect("writing to a String cannot fail");
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(row.metric.as_str());
            for cell in &row.cells {
                match cell {
                    Some(v) => write!(out, ",{}", fmt_f64(*v)),
                    None => write!(out, ","),
                }
                .expect("writing to a String cannot fail");
            }
            out.push('\n');
        }
        out
    }
}

/// How often each estimator kind lands in a metric's chosen set, as a
/// fraction of benchmark cells; each row sums to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub kinds: Vec<String>,
    pub rows: Vec<FrequencyRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub metric: MetricName,
    pub cells: Vec<f64>,
}

impl FrequencyTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for k in &self.kinds {
            write!(out, ",{k}").expect("writing to a String cannot fail");
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(row.metric.as_str());
            for cell in &row.cells {
                write!(out, ",{}", fmt_f64(*cell)).expect("writing to a String cannot fail");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunCounts {
    pub cells_completed: usize,
    pub cells_skipped: usize,
    pub estimator_failures: usize,
}

/// The five aggregate tables plus the records explaining missing data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub counts: RunCounts,
    pub normalized_pehe: MetricTable,
    pub absolute_pehe: MetricTable,
    pub win_rate: MetricTable,
    pub rank_correlation: MetricTable,
    pub top_frequency: FrequencyTable,
    pub skips: Vec<SkipRecord>,
    pub failures: Vec<FailureRecord>,
}

impl BenchmarkReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization cannot fail");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::MalformedResults {
            reason: format!("report.json: {e}"),
        })
    }

    /// Fixed-width text rendering of all five tables.
    pub fn to_summary(&self) -> String {
        let mut out = String::new();
        writeln!(out, "benchmark report").unwrap();
        writeln!(out, "================").unwrap();
        writeln!(
            out,
            "cells: {} completed, {} skipped; estimator failures: {}",
            self.counts.cells_completed, self.counts.cells_skipped, self.counts.estimator_failures
        )
        .unwrap();
        let sections: [(&str, &MetricTable); 4] = [
            ("normalized pehe (vs oracle best; lower is better)", &self.normalized_pehe),
            ("absolute pehe of the chosen set", &self.absolute_pehe),
            ("win rate against the other metrics", &self.win_rate),
            ("rank correlation with oracle pehe", &self.rank_correlation),
        ];
        for (title, table) in sections {
            writeln!(out, "\n{title}").unwrap();
            render_table(&mut out, &table.columns, table.rows.iter().map(|r| {
                (
                    r.metric.as_str(),
                    r.cells
                        .iter()
                        .map(|c| match c {
                            Some(v) => format!("{v:.4}"),
                            None => "-".to_string(),
                        })
                        .collect::<Vec<String>>(),
                )
            }));
        }
        writeln!(out, "\nshare of cells each estimator kind is chosen in").unwrap();
        render_table(
            &mut out,
            &self.top_frequency.kinds,
            self.top_frequency.rows.iter().map(|r| {
                (
                    r.metric.as_str(),
                    r.cells.iter().map(|v| format!("{v:.4}")).collect(),
                )
            }),
        );
        for skip in &self.skips {
            writeln!(out, "\nskipped {} seed {}: {}", skip.dataset, skip.seed, skip.reason)
                .unwrap();
        }
        if !self.failures.is_empty() {
            writeln!(out, "\nfailures:").unwrap();
            for f in &self.failures {
                writeln!(out, "  {} seed {} {}: {}", f.dataset, f.seed, f.estimator, f.error)
                    .unwrap();
            }
        }
        out
    }
}

fn render_table<'a>(
    out: &mut String,
    columns: &[String],
    rows: impl Iterator<Item = (&'a str, Vec<String>)>,
) {
    write!(out, "{:<16}", "metric").unwrap();
    for c in columns {
        write!(out, " {c:>14}").unwrap();
    }
    out.push('\n');
    for (name, cells) in rows {
        write!(out, "{name:<16}").unwrap();
        for cell in cells {
            write!(out, " {cell:>14}").unwrap();
        }
        out.push('\n');
    }
}

/// One benchmark cell's columns: per metric, the (estimator, value) pairs
/// in bank order.
struct Cell {
    columns: BTreeMap<MetricName, Vec<(String, f64)>>,
}

impl Cell {
    fn oracle_of(&self, label: &str) -> Option<f64> {
        self.columns
            .get(&MetricName::OraclePehe)?
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, v)| *v)
    }

    /// Mean oracle PEHE over a chosen set, skipping members without an
    /// oracle row; `None` if nothing remains.
    fn set_pehe(&self, set: &[String]) -> Option<f64> {
        let vals: Vec<f64> = set.iter().filter_map(|l| self.oracle_of(l)).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

/// Builds the aggregate report from a raw result table.
///
/// Cells without oracle rows contribute nothing to the tables; a metric
/// whose correlation is undefined (a constant column) leaves an empty cell
/// rather than failing the report.
pub fn build_report(raw: &RawResults) -> Result<BenchmarkReport, PipelineError> {
    raw.validate()?;

    let mut cells: BTreeMap<(String, u64), Cell> = BTreeMap::new();
    for row in &raw.rows {
        cells
            .entry((row.dataset.clone(), row.seed))
            .or_insert_with(|| Cell {
                columns: BTreeMap::new(),
            })
            .columns
            .entry(row.metric)
            .or_default()
            .push((row.estimator.clone(), row.value));
    }

    let metrics: Vec<MetricName> = MetricName::ALL
        .into_iter()
        .filter(|m| raw.rows.iter().any(|r| r.metric == *m))
        .collect();
    let observational: Vec<MetricName> = metrics
        .iter()
        .copied()
        .filter(|m| *m != MetricName::OraclePehe)
        .collect();

    let mut groups: Vec<String> = cells
        .keys()
        .map(|(dataset, _)| group_of(dataset).to_string())
        .collect();
    groups.sort();
    groups.dedup();

    let kind_labels: Vec<String> = {
        let in_bank: std::collections::BTreeSet<&str> = raw
            .rows
            .iter()
            .map(|r| kind_prefix(&r.estimator))
            .collect();
        CateEstimatorKind::ALL
            .iter()
            .map(|k| k.label().to_string())
            .filter(|l| in_bank.contains(l.as_str()))
            .collect()
    };

    // Per (group, metric) accumulators over cells: defined values only.
    let mut norm: BTreeMap<(usize, MetricName), Vec<f64>> = BTreeMap::new();
    let mut abs: BTreeMap<(usize, MetricName), Vec<f64>> = BTreeMap::new();
    let mut wins: BTreeMap<(usize, MetricName), Vec<f64>> = BTreeMap::new();
    let mut corr: BTreeMap<(usize, MetricName), Vec<f64>> = BTreeMap::new();
    let mut freq: BTreeMap<MetricName, Vec<f64>> = BTreeMap::new();
    let mut freq_cells: BTreeMap<MetricName, usize> = BTreeMap::new();

    for ((dataset, _seed), cell) in &cells {
        let group = groups
            .iter()
            .position(|g| g == group_of(dataset))
            .expect("group list was built from the same cells");
        let Some(oracle_col) = cell.columns.get(&MetricName::OraclePehe) else {
            continue;
        };

        let oracle_set = best_set(oracle_col, Orientation::Minimize);
        let oracle_best = cell
            .set_pehe(&oracle_set)
            .expect("oracle set members always carry oracle rows");
        abs.entry((group, MetricName::OraclePehe))
            .or_default()
            .push(oracle_best);
        if let Some(v) = normalized_pehe(oracle_best, oracle_best) {
            norm.entry((group, MetricName::OraclePehe)).or_default().push(v);
        }
        match rank_corr(
            &oracle_col.iter().map(|(_, v)| *v).collect::<Vec<f64>>(),
            &oracle_col.iter().map(|(_, v)| *v).collect::<Vec<f64>>(),
            Orientation::Minimize,
        ) {
            Ok(v) => corr
                .entry((group, MetricName::OraclePehe))
                .or_default()
                .push(v),
            Err(NumericsError::ConstantInput { .. }) => {}
            Err(e) => return Err(e.into()),
        }
        record_frequency(
            &mut freq,
            &mut freq_cells,
            MetricName::OraclePehe,
            &oracle_set,
            &kind_labels,
        );

        // Best-set PEHE per observational metric present in this cell, for
        // the win-rate comparison below.
        let mut cell_pehes: Vec<(MetricName, f64)> = Vec::new();
        for &metric in &observational {
            let Some(column) = cell.columns.get(&metric) else {
                continue;
            };
            let set = best_set(column, metric.orientation());
            record_frequency(&mut freq, &mut freq_cells, metric, &set, &kind_labels);
            let Some(set_pehe) = cell.set_pehe(&set) else {
                continue;
            };
            abs.entry((group, metric)).or_default().push(set_pehe);
            if let Some(v) = normalized_pehe(set_pehe, oracle_best) {
                norm.entry((group, metric)).or_default().push(v);
            }
            cell_pehes.push((metric, set_pehe));

            // Correlation over estimators present in both columns.
            let mut m_vals = Vec::new();
            let mut o_vals = Vec::new();
            for (label, value) in column {
                if let Some(o) = cell.oracle_of(label) {
                    m_vals.push(*value);
                    o_vals.push(o);
                }
            }
            match rank_corr(&m_vals, &o_vals, metric.orientation()) {
                Ok(v) => corr.entry((group, metric)).or_default().push(v),
                Err(NumericsError::ConstantInput { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }

        if cell_pehes.len() >= 2 {
            let pehes: Vec<f64> = cell_pehes.iter().map(|(_, p)| *p).collect();
            for (&(metric, _), rate) in cell_pehes.iter().zip(win_rate(&pehes)) {
                wins.entry((group, metric)).or_default().push(rate);
            }
        }
    }

    let table = |data: &BTreeMap<(usize, MetricName), Vec<f64>>, with_oracle: bool| MetricTable {
        columns: groups.clone(),
        rows: metrics
            .iter()
            .copied()
            .filter(|m| with_oracle || *m != MetricName::OraclePehe)
            .map(|metric| TableRow {
                metric,
                cells: (0..groups.len())
                    .map(|g| {
                        data.get(&(g, metric))
                            .map(|vals| vals.iter().sum::<f64>() / vals.len() as f64)
                    })
                    .collect(),
            })
            .collect(),
    };

    let top_frequency = FrequencyTable {
        kinds: kind_labels.clone(),
        rows: metrics
            .iter()
            .copied()
            .filter(|m| freq_cells.get(m).copied().unwrap_or(0) > 0)
            .map(|metric| {
                let n = freq_cells[&metric] as f64;
                FrequencyRow {
                    metric,
                    cells: freq[&metric].iter().map(|v| v / n).collect(),
                }
            })
            .collect(),
    };

    Ok(BenchmarkReport {
        counts: RunCounts {
            cells_completed: cells.len(),
            cells_skipped: raw.skips.len(),
            estimator_failures: raw.failures.len(),
        },
        normalized_pehe: table(&norm, true),
        absolute_pehe: table(&abs, true),
        win_rate: table(&wins, false),
        rank_correlation: table(&corr, true),
        top_frequency,
        skips: raw.skips.clone(),
        failures: raw.failures.clone(),
    })
}

fn record_frequency(
    freq: &mut BTreeMap<MetricName, Vec<f64>>,
    freq_cells: &mut BTreeMap<MetricName, usize>,
    metric: MetricName,
    set: &[String],
    kind_labels: &[String],
) {
    if set.is_empty() {
        return;
    }
    let counts = freq
        .entry(metric)
        .or_insert_with(|| vec![0.0; kind_labels.len()]);
    let share = 1.0 / set.len() as f64;
    for label in set {
        if let Some(pos) = kind_labels.iter().position(|k| k == kind_prefix(label)) {
            counts[pos] += share;
        }
    }
    *freq_cells.entry(metric).or_insert(0) += 1;
}

fn group_of(dataset: &str) -> &str {
    dataset.split('/').next().unwrap_or(dataset)
}

fn kind_prefix(label: &str) -> &str {
    label.split('|').next().unwrap_or(label)
}
