use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{partition::sample_dirichlet, split_4_1_1, ClientDataSplit, LabeledDataset};
use crate::error::{config_err, Result};
use crate::nn::Matrix;
use crate::seed::{derive, rng_for, stream};

/// Gaussian class clusters with per-client Dirichlet class mixtures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub clients: usize,
    pub rows_per_client: usize,
    pub input_dim: usize,
    /// Standard deviation of samples around their class centroid.
    pub spread: f64,
    /// Dirichlet concentration for each client's class mixture.
    pub alpha: f64,
    /// Standard deviation of centroid coordinates.
    pub centroid_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 5,
            clients: 10,
            rows_per_client: 300,
            input_dim: 20,
            spread: 1.0,
            alpha: 0.3,
            centroid_scale: 1.0,
            seed: 0,
        }
    }
}

/// Generated client splits plus the centroids that produced them.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub clients: Vec<ClientDataSplit>,
    pub centroids: Vec<Vec<f64>>,
}

pub fn synth_clusters(spec: &SynthSpec) -> Result<SynthData> {
    if spec.classes == 0 || spec.clients == 0 || spec.input_dim == 0 {
        return Err(config_err("classes, clients and input_dim must be at least 1"));
    }
    if spec.rows_per_client < 6 {
        return Err(config_err(format!(
            "rows_per_client must be at least 6 for a 4:1:1 split, got {}",
            spec.rows_per_client
        )));
    }
    if !(spec.spread >= 0.0 && spec.centroid_scale >= 0.0) {
        return Err(config_err("spread and centroid_scale must be non-negative"));
    }

    let mut rng = rng_for(spec.seed, &[stream::SYNTH]);
    let centroids: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            (0..spec.input_dim)
                .map(|_| spec.centroid_scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let mut clients = Vec::with_capacity(spec.clients);
    for k in 0..spec.clients {
        let mut rng = rng_for(spec.seed, &[stream::SYNTH, k as u64 + 1]);
        let mix = sample_dirichlet(spec.alpha, spec.classes, &mut rng)?;
        let pick = WeightedIndex::new(&mix)
            .map_err(|e| config_err(format!("degenerate class mixture: {e}")))?;
        let n = spec.rows_per_client;
        let mut data = Vec::with_capacity(n * spec.input_dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let s = pick.sample(&mut rng);
            labels.push(s);
            data.extend(
                centroids[s]
                    .iter()
                    .map(|c| c + spec.spread * rng.sample::<f64, _>(StandardNormal)),
            );
        }
        let mut ds =
            LabeledDataset::new(Matrix::from_vec(n, spec.input_dim, data)?, labels, spec.classes)?;
        ds.ids = (k * n..(k + 1) * n).collect();
        clients.push(split_4_1_1(&ds, derive(spec.seed, &[stream::SPLIT, k as u64]))?);
    }
    Ok(SynthData { clients, centroids })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_spread_puts_samples_on_centroids() {
        let spec = SynthSpec {
            clients: 2,
            rows_per_client: 12,
            input_dim: 3,
            spread: 0.0,
            ..SynthSpec::default()
        };
        let d = synth_clusters(&spec).unwrap();
        for c in &d.clients {
            for part in [&c.train, &c.validation, &c.test] {
                for (row, &l) in part.features.iter_rows().zip(&part.labels) {
                    assert_eq!(row, d.centroids[l].as_slice());
                }
            }
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let spec = SynthSpec {
            clients: 3,
            rows_per_client: 30,
            ..SynthSpec::default()
        };
        let a = synth_clusters(&spec).unwrap();
        let b = synth_clusters(&spec).unwrap();
        assert_eq!(a.clients, b.clients);
        let c = synth_clusters(&SynthSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.clients, c.clients);
    }

    #[test]
    fn rejects_tiny_clients() {
        let spec = SynthSpec {
            rows_per_client: 5,
            ..SynthSpec::default()
        };
        assert!(synth_clusters(&spec).is_err());
    }
}
