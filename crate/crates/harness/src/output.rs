//! Result files: `metrics.csv`, `summary.json` and `fe_hist_round{r}.csv`.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use eada_core::RoundMetrics;
use serde::Serialize;

use crate::config::{ExperimentConfig, Strategy};
use crate::experiment::{Aggregate, ExperimentResult};
use crate::error::{HarnessError, Result};

pub const METRICS_COLUMNS: [&str; 10] = [
    "strategy",
    "seed",
    "round",
    "epoch",
    "labeled_count",
    "target_error",
    "mean_F_source",
    "mean_F_target",
    "selected_error_rate",
    "selected_indices",
];

pub const HISTOGRAM_COLUMNS: [&str; 7] = ["strategy", "seed", "bin", "lo", "hi", "source_count", "target_count"];

/// One parsed `metrics.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub strategy: Strategy,
    pub seed: u64,
    pub metrics: RoundMetrics,
}

/// One parsed histogram row.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramRow {
    pub strategy: Strategy,
    pub seed: u64,
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub source_count: usize,
    pub target_count: usize,
}

fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Format(e.to_string())
}

fn join_indices(idx: &[usize]) -> String {
    idx.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

/// Rows in (strategy, seed, round) order. Floats are written in shortest
/// round-trip form so the file parses back exactly.
pub fn write_metrics<W: Write>(result: &ExperimentResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_COLUMNS).map_err(csv_err)?;
    for run in &result.runs {
        for m in &run.rounds {
            w.write_record([
                run.strategy.name().to_string(),
                run.seed.to_string(),
                m.round_index.to_string(),
                m.epoch.to_string(),
                m.labeled_count.to_string(),
                m.target_error_rate.to_string(),
                m.mean_f_source.to_string(),
                m.mean_f_target_unlabeled.to_string(),
                m.selected_error_rate.to_string(),
                join_indices(&m.selected_indices),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| HarnessError::Format(e.to_string()))?;
    Ok(())
}

/// Column positions of `required` within a header, or a format error naming
/// the first missing column.
pub fn column_positions(header: &csv::StringRecord, required: &[&str]) -> Result<Vec<usize>> {
    required
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| HarnessError::Format(format!("missing column `{name}`")))
        })
        .collect()
}

pub(crate) struct Row<'a> {
    record: &'a csv::StringRecord,
    line: u64,
}

impl Row<'_> {
    pub(crate) fn field<T: std::str::FromStr>(&self, pos: usize, name: &str) -> Result<T> {
        let raw = self.record.get(pos).unwrap_or("").trim();
        raw.parse()
            .map_err(|_| HarnessError::Format(format!("line {}: bad value `{raw}` in column `{name}`", self.line)))
    }
}

/// Reads every row of a CSV whose header must contain `columns`; a file with
/// no header at all counts as empty.
pub(crate) fn read_rows<R: Read, T>(
    reader: R,
    columns: &[&str],
    mut parse: impl FnMut(&Row<'_>, &[usize]) -> Result<T>,
) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut records = r.records();
    let header = match records.next() {
        None => return Ok(Vec::new()),
        Some(h) => h.map_err(csv_err)?,
    };
    let pos = column_positions(&header, columns)?;
    let mut out = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec.map_err(csv_err)?;
        out.push(parse(&Row { record: &rec, line: i as u64 + 2 }, &pos)?);
    }
    Ok(out)
}

pub fn read_metrics<R: Read>(reader: R) -> Result<Vec<MetricsRow>> {
    read_rows(reader, &METRICS_COLUMNS, |row, p| {
        let c = &METRICS_COLUMNS;
        let raw_idx: String = row.field(p[9], c[9])?;
        let selected_indices = if raw_idx.is_empty() {
            Vec::new()
        } else {
            raw_idx
                .split(';')
                .map(|s| s.parse().map_err(|_| HarnessError::Format(format!("line {}: bad index `{s}`", row.line))))
                .collect::<Result<_>>()?
        };
        Ok(MetricsRow {
            strategy: row.field(p[0], c[0])?,
            seed: row.field(p[1], c[1])?,
            metrics: RoundMetrics {
                round_index: row.field(p[2], c[2])?,
                epoch: row.field(p[3], c[3])?,
                labeled_count: row.field(p[4], c[4])?,
                target_error_rate: row.field(p[5], c[5])?,
                mean_f_source: row.field(p[6], c[6])?,
                mean_f_target_unlabeled: row.field(p[7], c[7])?,
                selected_error_rate: row.field(p[8], c[8])?,
                selected_indices,
            },
        })
    })
}

/// Histogram rows of every run that has a snapshot at `round`.
pub fn write_histograms<W: Write>(result: &ExperimentResult, round: usize, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HISTOGRAM_COLUMNS).map_err(csv_err)?;
    for run in &result.runs {
        let Some(h) = run.histograms.get(round) else { continue };
        for k in 0..h.bins() {
            let (lo, hi) = h.bin_edges(k);
            w.write_record([
                run.strategy.name().to_string(),
                run.seed.to_string(),
                k.to_string(),
                lo.to_string(),
                hi.to_string(),
                h.source_counts[k].to_string(),
                h.target_counts[k].to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| HarnessError::Format(e.to_string()))?;
    Ok(())
}

pub fn read_histograms<R: Read>(reader: R) -> Result<Vec<HistogramRow>> {
    read_rows(reader, &HISTOGRAM_COLUMNS, |row, p| {
        let c = &HISTOGRAM_COLUMNS;
        Ok(HistogramRow {
            strategy: row.field(p[0], c[0])?,
            seed: row.field(p[1], c[1])?,
            bin: row.field(p[2], c[2])?,
            lo: row.field(p[3], c[3])?,
            hi: row.field(p[4], c[4])?,
            source_count: row.field(p[5], c[5])?,
            target_count: row.field(p[6], c[6])?,
        })
    })
}

#[derive(Serialize)]
struct Summary<'a> {
    strategies: &'a [Aggregate],
    config: &'a ExperimentConfig,
    meta: Meta,
}

#[derive(Serialize)]
struct Meta {
    generated_unix_secs: u64,
    version: &'static str,
}

/// Aggregates and the effective config. The wall-clock timestamp lives only
/// under `meta`.
pub fn summary_json(result: &ExperimentResult, cfg: &ExperimentConfig) -> String {
    let generated_unix_secs =
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let summary = Summary {
        strategies: &result.aggregates,
        config: cfg,
        meta: Meta { generated_unix_secs, version: env!("CARGO_PKG_VERSION") },
    };
    serde_json::to_string_pretty(&summary).expect("summary serializes")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

/// Writes all result files into `dir`, creating it if needed, and returns
/// their paths.
pub fn write_all(result: &ExperimentResult, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut written = Vec::new();

    let mut buf = Vec::new();
    write_metrics(result, &mut buf)?;
    let path = dir.join("metrics.csv");
    write_file(&path, &buf)?;
    written.push(path);

    let path = dir.join("summary.json");
    write_file(&path, summary_json(result, cfg).as_bytes())?;
    written.push(path);

    let rounds = result.runs.iter().map(|r| r.histograms.len()).max().unwrap_or(0);
    for r in 0..rounds {
        let mut buf = Vec::new();
        write_histograms(result, r, &mut buf)?;
        let path = dir.join(format!("fe_hist_round{r}.csv"));
        write_file(&path, &buf)?;
        written.push(path);
    }
    Ok(written)
}
