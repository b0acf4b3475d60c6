use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::{ClientDataSplit, LabeledDataset};
use crate::error::{config_err, data_err, Result};
use crate::seed::{rng_for, stream};

const MAX_PARTITION_ATTEMPTS: u64 = 1000;

/// How to scatter a pooled dataset across clients.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionSpec {
    pub clients: usize,
    /// Dirichlet concentration; small values give skewed class mixtures.
    pub alpha: f64,
    pub seed: u64,
    pub min_samples: usize,
}

impl PartitionSpec {
    pub fn new(clients: usize, alpha: f64, seed: u64) -> Self {
        Self {
            clients,
            alpha,
            seed,
            min_samples: 6,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(config_err("partition needs at least one client"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(config_err(format!(
                "Dirichlet alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.min_samples == 0 {
            return Err(config_err("min_samples must be at least 1"));
        }
        Ok(())
    }
}

/// One draw from the symmetric Dirichlet(alpha, ..., alpha) over `k` outcomes,
/// built from normalized Gamma(alpha, 1) variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| config_err(format!("invalid Dirichlet alpha {alpha}: {e}")))?;
    if k == 1 {
        return Ok(vec![1.0]);
    }
    // Tiny alphas can underflow every variate to zero; redraw in that case.
    loop {
        let g: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = g.iter().sum();
        if total > 0.0 && total.is_finite() {
            return Ok(g.into_iter().map(|x| x / total).collect());
        }
    }
}

/// Splits `n` items by cumulative proportions; the last bucket absorbs rounding.
fn cut_counts(n: usize, props: &[f64]) -> Vec<usize> {
    let mut counts = Vec::with_capacity(props.len());
    let mut cum = 0.0;
    let mut prev = 0usize;
    for (i, p) in props.iter().enumerate() {
        cum += p;
        let edge = if i + 1 == props.len() {
            n
        } else {
            ((cum * n as f64).floor() as usize).clamp(prev, n)
        };
        counts.push(edge - prev);
        prev = edge;
    }
    counts
}

/// Class-by-class Dirichlet partition.
///
/// For each class, draw client proportions from Dirichlet(alpha) and deal the
/// class's shuffled rows out by cumulative share. If some client ends up with
/// fewer than `min_samples` rows the whole partition is redrawn, up to a
/// fixed number of attempts.
pub fn dirichlet_partition(ds: &LabeledDataset, spec: &PartitionSpec) -> Result<Vec<LabeledDataset>> {
    spec.validate()?;
    let n_clients = spec.clients;
    if n_clients * spec.min_samples > ds.len() {
        return Err(config_err(format!(
            "cannot give {n_clients} clients {} rows each from {} rows",
            spec.min_samples,
            ds.len()
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    if let Some(s) = by_class.iter().position(Vec::is_empty) {
        return Err(data_err(format!("class {s} has no samples to partition")));
    }

    for attempt in 0..MAX_PARTITION_ATTEMPTS {
        let mut rng = rng_for(spec.seed, &[stream::PARTITION, attempt]);
        let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
        for rows in &by_class {
            let mut rows = rows.clone();
            rows.shuffle(&mut rng);
            let props = sample_dirichlet(spec.alpha, n_clients, &mut rng)?;
            let mut start = 0;
            for (k, c) in cut_counts(rows.len(), &props).into_iter().enumerate() {
                assigned[k].extend_from_slice(&rows[start..start + c]);
                start += c;
            }
        }
        if assigned.iter().all(|a| a.len() >= spec.min_samples) {
            return Ok(assigned
                .into_iter()
                .map(|mut idx| {
                    idx.sort_by_key(|&i| (ds.labels[i], i));
                    ds.select(&idx)
                })
                .collect());
        }
    }
    Err(config_err(format!(
        "no Dirichlet(alpha={}) draw gave every client {} rows after {MAX_PARTITION_ATTEMPTS} attempts",
        spec.alpha, spec.min_samples
    )))
}

/// Seeded shuffle, then train/validation/test in a 4:1:1 ratio
/// (`round(4n/6)`, `round(n/6)`, remainder), so every part is within one
/// row of its exact share.
pub fn split_4_1_1(ds: &LabeledDataset, seed: u64) -> Result<ClientDataSplit> {
    let n = ds.len();
    if n < 6 {
        return Err(data_err(format!("need at least 6 rows to split 4:1:1, got {n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_for(seed, &[stream::SPLIT]));
    let n_train = (4 * n + 3) / 6;
    let n_val = (n + 3) / 6;
    Ok(ClientDataSplit {
        train: ds.select(&perm[..n_train]),
        validation: ds.select(&perm[n_train..n_train + n_val]),
        test: ds.select(&perm[n_train + n_val..]),
    })
}

/// Per-client class counts as comma-separated text: `client,class_0,...`.
pub fn class_count_table(clients: &[LabeledDataset]) -> String {
    let classes = clients.iter().map(|c| c.classes).max().unwrap_or(0);
    let mut out = String::from("client");
    for s in 0..classes {
        out.push_str(&format!(",class_{s}"));
    }
    out.push('\n');
    for (k, c) in clients.iter().enumerate() {
        out.push_str(&k.to_string());
        for n in c.class_counts() {
            out.push_str(&format!(",{n}"));
        }
        out.push('\n');
    }
    out
}

/// For each class, the largest client share of that class divided by the
/// smallest (infinite when some client holds none of it).
pub fn class_share_ratios(clients: &[LabeledDataset], classes: usize) -> Vec<f64> {
    (0..classes)
        .map(|s| {
            let counts: Vec<usize> = clients
                .iter()
                .map(|c| c.labels.iter().filter(|&&l| l == s).count())
                .collect();
            let max = counts.iter().copied().max().unwrap_or(0);
            let min = counts.iter().copied().min().unwrap_or(0);
            if min == 0 {
                f64::INFINITY
            } else {
                max as f64 / min as f64
            }
        })
        .collect()
}
