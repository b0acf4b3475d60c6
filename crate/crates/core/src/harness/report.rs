use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{MetricRow, METRICS_HEADER};
use crate::error::{Error, Result};

/// Pooled statistics for one (algorithm, CAR) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub algorithm: String,
    pub car: f64,
    pub repetitions: usize,
    /// Highest per-round accuracy over every pooled repetition.
    pub best_accuracy: f64,
    /// Mean over repetitions of each repetition's best accuracy.
    pub mean_best_accuracy: f64,
    /// Mean over repetitions of the average of the last ten rounds.
    pub mean_final10_accuracy: f64,
}

const FINAL_WINDOW: usize = 10;
const RUNNING_MAX_TOL: f64 = 1e-12;

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        msg: msg.into(),
    }
}

/// Reads a metrics file and checks its invariants: fixed header, rounds
/// contiguous from 0 within each repetition, and `best_accuracy_so_far`
/// equal to the running maximum.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricRow>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, e.position().map_or(1, |p| p.line()), e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    if headers.iter().ne(METRICS_HEADER) {
        return Err(parse_err(
            path,
            1,
            format!("expected header '{}'", METRICS_HEADER.join(",")),
        ));
    }

    let mut rows = Vec::new();
    let mut state: BTreeMap<(u64, String, u64), (usize, f64)> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            parse_err(path, e.position().map_or(0, |p| p.line()), e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: MetricRow = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(path, line, e.to_string()))?;
        if !(0.0..=1.0).contains(&row.avg_accuracy) {
            return Err(parse_err(path, line, format!("avg_accuracy {} outside [0, 1]", row.avg_accuracy)));
        }
        let key = (row.seed, row.algorithm.to_string(), row.car.to_bits());
        let (next_round, running) = state.entry(key).or_insert((0, f64::NEG_INFINITY));
        if row.round != *next_round {
            return Err(parse_err(
                path,
                line,
                format!("round {} out of sequence, expected {next_round}", row.round),
            ));
        }
        *running = running.max(row.avg_accuracy);
        if (row.best_accuracy_so_far - *running).abs() > RUNNING_MAX_TOL {
            return Err(parse_err(
                path,
                line,
                format!(
                    "best_accuracy_so_far {} is not the running maximum {}",
                    row.best_accuracy_so_far, running
                ),
            ));
        }
        *next_round += 1;
        rows.push(row);
    }
    Ok(rows)
}

/// Pools repetitions from every file by (algorithm, CAR). Rows are sorted by
/// algorithm name, then by CAR descending.
pub fn compare_report<P: AsRef<Path>>(files: &[P]) -> Result<Vec<ComparisonRow>> {
    if files.is_empty() {
        return Err(Error::Config("compare: at least one metrics file is required".into()));
    }
    // (algorithm, car bits) -> per repetition accuracy sequences
    let mut pooled: BTreeMap<(String, u64), Vec<Vec<f64>>> = BTreeMap::new();
    for path in files {
        let mut reps: BTreeMap<(String, u64, u64), Vec<f64>> = BTreeMap::new();
        for row in read_metrics(path)? {
            reps.entry((row.algorithm.to_string(), row.car.to_bits(), row.seed))
                .or_default()
                .push(row.avg_accuracy);
        }
        for ((alg, car, _), acc) in reps {
            pooled.entry((alg, car)).or_default().push(acc);
        }
    }

    let mut out: Vec<ComparisonRow> = pooled
        .into_iter()
        .map(|((algorithm, car), reps)| {
            let bests: Vec<f64> = reps
                .iter()
                .map(|a| a.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let finals: Vec<f64> = reps
                .iter()
                .map(|a| {
                    let tail = &a[a.len().saturating_sub(FINAL_WINDOW)..];
                    tail.iter().sum::<f64>() / tail.len() as f64
                })
                .collect();
            let n = reps.len() as f64;
            ComparisonRow {
                algorithm,
                car: f64::from_bits(car),
                repetitions: reps.len(),
                best_accuracy: bests.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean_best_accuracy: bests.iter().sum::<f64>() / n,
                mean_final10_accuracy: finals.iter().sum::<f64>() / n,
            }
        })
        .collect();
    out.sort_by(|a, b| a.algorithm.cmp(&b.algorithm).then(b.car.total_cmp(&a.car)));
    Ok(out)
}

/// Plain-text table of [`compare_report`] rows.
pub fn format_comparison(rows: &[ComparisonRow]) -> String {
    let mut out = format!(
        "{:<10} {:>6} {:>5} {:>10} {:>10} {:>10}\n",
        "algorithm", "car", "reps", "best", "mean_best", "final10"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>5} {:>10.4} {:>10.4} {:>10.4}",
            r.algorithm, r.car, r.repetitions, r.best_accuracy, r.mean_best_accuracy, r.mean_final10_accuracy
        );
    }
    out
}

