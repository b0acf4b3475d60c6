//! Experiment runner: config parsing, dataset construction, repetition
//! dispatch, metrics files and comparison reports.

mod config;
mod report;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    config_from_flags, parse_config, CsvSource, DataSource, ExperimentConfig, Overrides,
    SyntheticSource,
};
pub use report::{compare_report, format_comparison, read_metrics, ComparisonRow};

use crate::data::{
    dirichlet_partition, load_csv, split_4_1_1, standardize, synth_clusters, ClientDataSplit,
    LabeledDataset, PartitionSpec, SynthSpec,
};
use crate::error::{config_err, Error, Result};
use crate::protocol::{run_experiment_with, Algorithm, SimulationConfig};
use crate::seed::{derive, stream};

/// Column order of `metrics.csv`.
pub const METRICS_HEADER: [&str; 7] = [
    "seed",
    "round",
    "algorithm",
    "car",
    "avg_accuracy",
    "best_accuracy_so_far",
    "wall_seconds",
];

/// One line of `metrics.csv` / `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub seed: u64,
    pub round: usize,
    pub algorithm: Algorithm,
    pub car: f64,
    pub avg_accuracy: f64,
    pub best_accuracy_so_far: f64,
    pub wall_seconds: f64,
}

/// Result of one (seed, algorithm) repetition.
#[derive(Clone, Debug)]
pub struct Repetition {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub rows: Vec<MetricRow>,
    pub affinity_csv: Option<String>,
    pub reps_csv: Option<String>,
}

/// Everything `run` produced, already written to the output directory.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub repetitions: Vec<Repetition>,
    pub summary: String,
    pub total_wall_seconds: f64,
}

impl RunOutput {
    pub fn rows(&self) -> impl Iterator<Item = &MetricRow> {
        self.repetitions.iter().flat_map(|r| r.rows.iter())
    }
}

/// Builds the per-client splits for one seed.
pub fn build_datasets(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<ClientDataSplit>> {
    match &cfg.source {
        DataSource::Synthetic(s) => Ok(synth_clusters(&SynthSpec {
            classes: s.classes,
            clients: cfg.sim.clients,
            rows_per_client: s.rows_per_client,
            input_dim: s.input_dim,
            spread: s.spread,
            alpha: s.alpha,
            centroid_scale: s.centroid_scale,
            seed,
        })?
        .clients),
        DataSource::Csv(c) => {
            let ds = load_standardized(c)?;
            partition_and_split(&ds, cfg.sim.clients, c, seed)
        }
    }
}

fn load_standardized(c: &CsvSource) -> Result<LabeledDataset> {
    let ds = load_csv(&c.path, &c.label_column, &c.categorical)?;
    Ok(standardize(&ds)?.0)
}

fn partition_and_split(
    ds: &LabeledDataset,
    clients: usize,
    c: &CsvSource,
    seed: u64,
) -> Result<Vec<ClientDataSplit>> {
    let spec = PartitionSpec {
        min_samples: c.min_samples,
        ..PartitionSpec::new(clients, c.alpha, seed)
    };
    dirichlet_partition(ds, &spec)?
        .iter()
        .enumerate()
        .map(|(k, part)| split_4_1_1(part, derive(seed, &[stream::SPLIT, k as u64])))
        .collect()
}

fn run_repetition(
    cfg: &ExperimentConfig,
    base: &SimulationConfig,
    seed: u64,
    algorithm: Algorithm,
    csv_data: Option<&LabeledDataset>,
) -> Result<Repetition> {
    let datasets = match (&cfg.source, csv_data) {
        (DataSource::Csv(c), Some(ds)) => partition_and_split(ds, base.clients, c, seed)?,
        _ => build_datasets(cfg, seed)?,
    };
    let sim_cfg = SimulationConfig {
        seed,
        algorithm,
        ..base.clone()
    };
    let n = sim_cfg.clients;
    let dump_affinity = cfg.dump_affinity && algorithm == Algorithm::Mocfl;
    let dump_reps = cfg.dump_reps && algorithm == Algorithm::Mocfl;
    let mut affinity = dump_affinity.then(|| {
        let cols: Vec<String> = (0..n).map(|i| format!("m_{i}")).collect();
        format!("round,client,{}\n", cols.join(","))
    });
    let mut reps = dump_reps.then(|| String::from("round,client,class,weight,distance\n"));

    let metrics = run_experiment_with(&sim_cfg, datasets, |sim, outcome| {
        let round = outcome.metrics.round;
        if let Some(buf) = affinity.as_mut() {
            for k in 0..n {
                let row: Vec<String> = sim.affinity().row(k).iter().map(f64::to_string).collect();
                let _ = writeln!(buf, "{round},{k},{}", row.join(","));
            }
        }
        if let Some(buf) = reps.as_mut() {
            for r in &outcome.reps {
                let _ = writeln!(buf, "{},{},{},{},{}", r.round, r.client, r.class, r.weight, r.distance);
            }
        }
        Ok(())
    })?;

    let mut best = f64::NEG_INFINITY;
    let rows = metrics
        .iter()
        .map(|m| {
            best = best.max(m.avg_accuracy);
            MetricRow {
                seed,
                round: m.round,
                algorithm,
                car: sim_cfg.car,
                avg_accuracy: m.avg_accuracy,
                best_accuracy_so_far: best,
                wall_seconds: m.wall_seconds,
            }
        })
        .collect();
    Ok(Repetition {
        seed,
        algorithm,
        rows,
        affinity_csv: affinity,
        reps_csv: reps,
    })
}

/// Runs every (seed, algorithm) repetition and writes `metrics.csv`,
/// `metrics.jsonl`, `summary.txt` and any requested dumps into
/// `cfg.out_dir`. Repetitions run in parallel; output is ordered by seed,
/// then by the configured algorithm order.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let start = Instant::now();
    fs::create_dir_all(&cfg.out_dir).map_err(|e| {
        config_err(format!("out_dir: cannot create {}: {e}", cfg.out_dir.display()))
    })?;

    let csv_data = match &cfg.source {
        DataSource::Csv(c) => Some(load_standardized(c)?),
        DataSource::Synthetic(_) => None,
    };
    let mut base = cfg.sim.clone();
    if let Some(ds) = &csv_data {
        base.arch.input_dim = ds.dim();
        base.arch.classes = ds.classes;
    }
    base.validate()?;

    let jobs: Vec<(u64, Algorithm)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| cfg.algorithms.iter().map(move |&a| (s, a)))
        .collect();
    let repetitions = jobs
        .par_iter()
        .map(|&(seed, alg)| run_repetition(cfg, &base, seed, alg, csv_data.as_ref()))
        .collect::<Result<Vec<_>>>()?;

    write_outputs(&cfg.out_dir, &repetitions)?;
    let total_wall_seconds = start.elapsed().as_secs_f64();
    let summary = summarize(&repetitions, total_wall_seconds);
    fs::write(cfg.out_dir.join("summary.txt"), &summary)?;
    Ok(RunOutput {
        repetitions,
        summary,
        total_wall_seconds,
    })
}

fn write_outputs(dir: &Path, repetitions: &[Repetition]) -> Result<()> {
    let mut csv = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(dir.join("metrics.csv"))
        .map_err(csv_io)?;
    csv.write_record(METRICS_HEADER).map_err(csv_io)?;
    let mut jsonl = String::new();
    for row in repetitions.iter().flat_map(|r| &r.rows) {
        csv.serialize(row).map_err(csv_io)?;
        jsonl.push_str(&serde_json::to_string(row).map_err(|e| Error::Io(e.into()))?);
        jsonl.push('\n');
    }
    csv.flush()?;
    fs::write(dir.join("metrics.jsonl"), jsonl)?;

    for rep in repetitions {
        let stem = format!("{}_seed{}", rep.algorithm, rep.seed);
        if let Some(text) = &rep.affinity_csv {
            fs::write(dir.join(format!("affinity_{stem}.csv")), text)?;
        }
        if let Some(text) = &rep.reps_csv {
            fs::write(dir.join(format!("reps_{stem}.csv")), text)?;
        }
    }
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(e.into())
}

fn summarize(repetitions: &[Repetition], total_wall: f64) -> String {
    let mut algorithms: Vec<Algorithm> = Vec::new();
    for r in repetitions {
        if !algorithms.contains(&r.algorithm) {
            algorithms.push(r.algorithm);
        }
    }
    let mut out = String::new();
    for alg in algorithms {
        let reps: Vec<&Repetition> = repetitions.iter().filter(|r| r.algorithm == alg).collect();
        let bests: Vec<f64> = reps
            .iter()
            .filter_map(|r| r.rows.last().map(|m| m.best_accuracy_so_far))
            .collect();
        let wall: f64 = reps.iter().flat_map(|r| &r.rows).map(|m| m.wall_seconds).sum();
        let rounds: usize = reps.iter().map(|r| r.rows.len()).sum();
        if bests.is_empty() {
            let _ = writeln!(out, "{alg}: best_accuracy=n/a (no rounds run)");
            continue;
        }
        let max = bests.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = bests.iter().sum::<f64>() / bests.len() as f64;
        let _ = writeln!(
            out,
            "{alg}: best_accuracy={max:.4} mean_best_accuracy={mean:.4} repetitions={} \
             wall_seconds={wall:.3} seconds_per_round={:.4}",
            bests.len(),
            wall / rounds.max(1) as f64,
        );
    }
    let _ = writeln!(out, "total_wall_seconds={total_wall:.3}");
    out
}
