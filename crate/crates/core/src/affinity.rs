//! Client affinity matrix, loss-based similarity weights and extractor
//! aggregation.
//!
//! Row `k` of the matrix holds the normalized weights client `k` assigned to
//! the neighbors it borrowed from. Those weights drive the next neighbor
//! selection, so clients that helped before are asked again.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{config_err, Result};

/// Denominator floor for the parameter distance in [`raw_weight`].
pub const DISTANCE_EPS: f64 = 1e-12;

/// `N x N` matrix of non-negative, finite client-pair weights.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl AffinityMatrix {
    /// Identity matrix: no client has a preference yet.
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for k in 0..n {
            data[k * n + k] = 1.0;
        }
        Self { n, data }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.data[k * self.n + i]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.n..(k + 1) * self.n]
    }

    pub fn set(&mut self, k: usize, i: usize, w: f64) -> Result<()> {
        if k >= self.n || i >= self.n {
            return Err(config_err(format!(
                "affinity index ({k}, {i}) out of range for {} clients",
                self.n
            )));
        }
        if !(w >= 0.0 && w.is_finite()) {
            return Err(config_err(format!("affinity weight must be finite and >= 0, got {w}")));
        }
        self.data[k * self.n + i] = w;
        Ok(())
    }

    /// Matrix rows as comma-separated text, one line per client.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for k in 0..self.n {
            let row: Vec<String> = self.row(k).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Neighbors chosen by client `client` for one round, best first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborSet {
    pub client: usize,
    pub neighbors: Vec<usize>,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

/// Raw and normalized weights, aligned with a [`NeighborSet`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightVector {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl WeightVector {
    pub fn from_raw(raw: Vec<f64>) -> Self {
        let normalized = normalize_weights(&raw);
        Self { raw, normalized }
    }
}

/// Picks up to `n` active clients other than `k` with the largest affinity.
///
/// Candidates are shuffled before a stable sort by weight, so equal weights
/// (including the all-zero cold start) are broken uniformly at random.
pub fn select_neighbors<R: Rng + ?Sized>(
    m: &AffinityMatrix,
    k: usize,
    active: &[usize],
    n: usize,
    rng: &mut R,
) -> NeighborSet {
    let mut candidates: Vec<usize> = active.iter().copied().filter(|&i| i != k).collect();
    candidates.sort_unstable();
    candidates.dedup();
    candidates.shuffle(rng);
    candidates.sort_by(|&a, &b| m.get(k, b).total_cmp(&m.get(k, a)));
    candidates.truncate(n);
    NeighborSet {
        client: k,
        neighbors: candidates,
    }
}

/// Validation-loss improvement per unit of extractor distance, clamped at 0.
pub fn raw_weight(loss_local: f64, loss_recv: f64, dist: f64) -> f64 {
    let w = (loss_local - loss_recv) / dist.max(DISTANCE_EPS);
    if w > 0.0 {
        w
    } else {
        0.0
    }
}

/// Scales weights to sum to one; all zeros stay all zeros.
pub fn normalize_weights(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        raw.iter().map(|w| w / total).collect()
    } else {
        vec![0.0; raw.len()]
    }
}

/// `prev + sum_i w_i (neighbor_i - prev)`, accumulated in neighbor order.
pub fn aggregate_extractor<V: AsRef<[f64]>>(
    prev: &[f64],
    neighbors: &[V],
    weights: &[f64],
) -> Result<Vec<f64>> {
    if neighbors.len() != weights.len() {
        return Err(config_err(format!(
            "{} neighbor extractors but {} weights",
            neighbors.len(),
            weights.len()
        )));
    }
    let mut out = prev.to_vec();
    for (nb, &w) in neighbors.iter().zip(weights) {
        let nb = nb.as_ref();
        if nb.len() != prev.len() {
            return Err(config_err(format!(
                "neighbor extractor has {} parameters, local has {}",
                nb.len(),
                prev.len()
            )));
        }
        if w == 0.0 {
            continue;
        }
        for ((o, &x), &p) in out.iter_mut().zip(nb).zip(prev) {
            *o += w * (x - p);
        }
    }
    Ok(out)
}

/// Writes the normalized weights into row `set.client`; other entries keep
/// their previous values.
pub fn update_matrix_row(m: &mut AffinityMatrix, set: &NeighborSet, weights: &[f64]) -> Result<()> {
    if set.len() != weights.len() {
        return Err(config_err(format!(
            "{} neighbors but {} weights",
            set.len(),
            weights.len()
        )));
    }
    for (&i, &w) in set.neighbors.iter().zip(weights) {
        m.set(set.client, i, w)?;
    }
    Ok(())
}
