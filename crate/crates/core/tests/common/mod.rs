#![allow(dead_code)]

use std::sync::Arc;

use mocfl::data::{synth_clusters, ClientDataSplit, SynthSpec};
use mocfl::nn::{Activation, ArchitectureSpec, ModelParams};
use mocfl::protocol::{Algorithm, SimulationConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        Activation::Tanh => x.tanh(),
        Activation::Identity => x,
    }
}

/// Explicit-loop forward pass through the extractor for a single input row.
///
/// Parameter layout: each conv layer stores its weights as
/// `[filter][in_channel][tap]` then one bias per filter; channels are laid
/// out one after another. After the last conv layer every filter is max
/// pooled over positions. Each dense layer stores `[out][in]` weights then
/// biases. The activation follows every layer.
pub fn oracle_features(arch: &ArchitectureSpec, p: &[f64], x: &[f64]) -> Vec<f64> {
    let mut off = 0;
    let mut channels = 1;
    let mut len = arch.input_dim;
    let mut signal: Vec<Vec<f64>> = vec![x.to_vec()];
    for layer in &arch.conv {
        let w0 = off;
        let b0 = w0 + layer.filters * channels * layer.kernel;
        let out_len = len - layer.kernel + 1;
        let mut next = vec![vec![0.0; out_len]; layer.filters];
        for f in 0..layer.filters {
            for pos in 0..out_len {
                let mut z = p[b0 + f];
                for ch in 0..channels {
                    for t in 0..layer.kernel {
                        let w = p[w0 + (f * channels + ch) * layer.kernel + t];
                        z += w * signal[ch][pos + t];
                    }
                }
                next[f][pos] = act(arch.activation, z);
            }
        }
        off = b0 + layer.filters;
        channels = layer.filters;
        len = out_len;
        signal = next;
    }
    let mut a: Vec<f64> = if arch.conv.is_empty() {
        x.to_vec()
    } else {
        signal
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    };
    let widths: Vec<usize> = arch
        .hidden
        .iter()
        .copied()
        .chain(std::iter::once(arch.feature_dim))
        .collect();
    for out in widths {
        let fan_in = a.len();
        let w0 = off;
        let b0 = w0 + out * fan_in;
        let mut next = vec![0.0; out];
        for o in 0..out {
            let mut z = p[b0 + o];
            for i in 0..fan_in {
                z += p[w0 + o * fan_in + i] * a[i];
            }
            next[o] = act(arch.activation, z);
        }
        off = b0 + out;
        a = next;
    }
    assert_eq!(off, p.len(), "oracle consumed a different number of parameters");
    a
}

/// Explicit-loop classifier: `[class][feature]` weights then biases.
pub fn oracle_logits(arch: &ArchitectureSpec, theta: &[f64], f: &[f64]) -> Vec<f64> {
    let d = arch.feature_dim;
    let s = arch.classes;
    (0..s)
        .map(|c| {
            let mut z = theta[s * d + c];
            for j in 0..d {
                z += theta[c * d + j] * f[j];
            }
            z
        })
        .collect()
}

/// Mean softmax cross-entropy computed without any library helpers.
pub fn oracle_loss(model: &ModelParams, rows: &[Vec<f64>], labels: &[usize]) -> f64 {
    let arch = model.arch();
    let mut total = 0.0;
    for (x, &y) in rows.iter().zip(labels) {
        let f = oracle_features(arch, model.extractor(), x);
        let z = oracle_logits(arch, model.classifier(), &f);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    total / rows.len() as f64
}

pub fn random_model(arch: ArchitectureSpec, seed: u64) -> ModelParams {
    let arch = Arc::new(arch);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e: Vec<f64> = (0..arch.extractor_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..arch.classifier_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    ModelParams::new(arch, e, c).unwrap()
}

pub fn random_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect()
}

/// Small synthetic federation and a matching config.
pub fn small_setup(
    algorithm: Algorithm,
    clients: usize,
    rows_per_client: usize,
    seed: u64,
) -> (SimulationConfig, Vec<ClientDataSplit>) {
    let data = synth_clusters(&SynthSpec {
        classes: 3,
        clients,
        rows_per_client,
        input_dim: 5,
        spread: 1.0,
        seed,
        ..SynthSpec::default()
    })
    .unwrap();
    let mut cfg = SimulationConfig::new(clients, ArchitectureSpec::mlp(5, vec![8], 4, 3, Activation::Relu));
    cfg.algorithm = algorithm;
    cfg.rounds = 4;
    cfg.batch_size = 8;
    cfg.local_lr = 0.05;
    cfg.global_lr = 0.05;
    cfg.seed = seed;
    (cfg, data.clients)
}
