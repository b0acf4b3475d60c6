//! Per-class mean representations, Gaussian-kernel MMD and the fusion of
//! current with historical representations.
//!
//! The full two-sample MMD costs a kernel evaluation per sample pair. Working
//! with per-class means collapses that to one evaluation per class, and the
//! resulting discrepancy is mapped to a fusion weight in `[0, 1]`: the closer
//! the current representation is to the historical one, the more it is
//! trusted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{config_err, data_err, Error, Result};
use crate::nn::{extract_with, ArchitectureSpec, Matrix};

/// Mean feature vector of one class, as seen by one extractor.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassRepresentation {
    pub class: usize,
    pub vector: Vec<f64>,
    /// Number of samples averaged.
    pub count: usize,
    /// Round whose extractor produced it.
    pub round: usize,
}

/// Fusion of current and historical representations of one class.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedRepresentation {
    pub class: usize,
    pub vector: Vec<f64>,
    pub weight: f64,
}

/// Gaussian RBF kernel `exp(-gamma * |x - y|^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub gamma: f64,
    /// Add the cross term in [`mmd_full`] instead of subtracting it.
    #[serde(default)]
    pub printed_sign: bool,
}

impl KernelConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(config_err(format!("kernel gamma must be positive, got {gamma}")));
        }
        Ok(Self {
            gamma,
            printed_sign: false,
        })
    }

    /// Default bandwidth `1 / (2 d)` for `d`-dimensional features.
    pub fn for_feature_dim(d: usize) -> Self {
        Self {
            gamma: 1.0 / (2.0 * d.max(1) as f64),
            printed_sign: false,
        }
    }
}

/// Mean extractor output per class present in `split`, ordered by class id.
pub fn class_mean_reps(
    arch: &ArchitectureSpec,
    extractor: &[f64],
    split: &LabeledDataset,
    round: usize,
) -> Result<Vec<ClassRepresentation>> {
    if split.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let feats = extract_with(arch, extractor, &split.features)?;
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (f, &l) in feats.iter_rows().zip(&split.labels) {
        let (sum, n) = sums
            .entry(l)
            .or_insert_with(|| (vec![0.0; arch.feature_dim], 0));
        sum.iter_mut().zip(f).for_each(|(s, x)| *s += x);
        *n += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(class, (sum, count))| ClassRepresentation {
            class,
            vector: sum.into_iter().map(|s| s / count as f64).collect(),
            count,
            round,
        })
        .collect())
}

pub fn gaussian_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(config_err(format!(
            "kernel arguments have dimensions {} and {}",
            x.len(),
            y.len()
        )));
    }
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-gamma * d2).exp())
}

fn mean_kernel(a: &Matrix, b: &Matrix, gamma: f64) -> Result<f64> {
    let mut s = 0.0;
    for x in a.iter_rows() {
        for y in b.iter_rows() {
            s += gaussian_kernel(x, y, gamma)?;
        }
    }
    Ok(s / (a.rows() * b.rows()) as f64)
}

/// Biased squared-MMD estimate between the row sets `x` and `y`.
///
/// Mean within-`x` similarity plus mean within-`y` similarity minus twice
/// the mean cross similarity, clamped at zero. With
/// [`KernelConfig::printed_sign`] the cross term is added instead.
pub fn mmd_full(x: &Matrix, y: &Matrix, kcfg: &KernelConfig) -> Result<f64> {
    if x.rows() == 0 || y.rows() == 0 {
        return Err(data_err("MMD needs at least one sample on each side"));
    }
    let xx = mean_kernel(x, x, kcfg.gamma)?;
    let yy = mean_kernel(y, y, kcfg.gamma)?;
    let xy = mean_kernel(x, y, kcfg.gamma)?;
    if kcfg.printed_sign {
        Ok(xx + yy + 2.0 * xy)
    } else {
        Ok((xx + yy - 2.0 * xy).max(0.0))
    }
}

/// Discrepancy between two mean representations of the same class:
/// `2 - k(r_new, r_old)`, always in `[1, 2]`. One kernel evaluation.
pub fn mmd_mean_rep(
    r_new: &ClassRepresentation,
    r_old: &ClassRepresentation,
    kcfg: &KernelConfig,
) -> Result<f64> {
    if r_new.class != r_old.class {
        return Err(config_err(format!(
            "cannot compare representations of classes {} and {}",
            r_new.class, r_old.class
        )));
    }
    Ok(2.0 - gaussian_kernel(&r_new.vector, &r_old.vector, kcfg.gamma)?)
}

/// Maps a mean-representation discrepancy in `[1, 2]` to a weight in `[0, 1]`
/// via `2 - mmd`. Out-of-range inputs are clamped.
pub fn fusion_weight(mmd: f64) -> f64 {
    let clamped = if mmd.is_nan() { 2.0 } else { mmd.clamp(1.0, 2.0) };
    if clamped != mmd {
        log::warn!("fusion weight input {mmd} outside [1, 2]; clamped to {clamped}");
    }
    2.0 - clamped
}

/// `w * r_new + (1 - w) * r_old`.
pub fn aggregate_reps(
    r_new: &ClassRepresentation,
    r_old: &ClassRepresentation,
    w: f64,
) -> Result<AggregatedRepresentation> {
    if r_new.class != r_old.class || r_new.vector.len() != r_old.vector.len() {
        return Err(config_err("representations differ in class or dimension"));
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(config_err(format!("fusion weight must lie in [0, 1], got {w}")));
    }
    Ok(AggregatedRepresentation {
        class: r_new.class,
        vector: r_new
            .vector
            .iter()
            .zip(&r_old.vector)
            .map(|(n, o)| w * n + (1.0 - w) * o)
            .collect(),
        weight: w,
    })
}

/// Outcome of fusing one client's current representations with its history.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Fusion {
    pub aggregated: Vec<AggregatedRepresentation>,
    /// Kernel evaluations spent; one per class that had a history entry.
    pub kernel_evals: u64,
    /// `(class, weight, |r_new - r_old|)`; the distance is 0 without history.
    pub records: Vec<(usize, f64, f64)>,
}

/// Fuses every current representation with its historical counterpart.
/// Classes without history pass through with weight 1.
pub fn fuse_with_history(
    current: &[ClassRepresentation],
    history: &BTreeMap<usize, ClassRepresentation>,
    kcfg: &KernelConfig,
) -> Result<Fusion> {
    let mut out = Fusion::default();
    for r in current {
        let (agg, dist) = match history.get(&r.class) {
            Some(old) => {
                let mmd = mmd_mean_rep(r, old, kcfg)?;
                out.kernel_evals += 1;
                let dist = crate::nn::param_l2_distance(&r.vector, &old.vector)?;
                (aggregate_reps(r, old, fusion_weight(mmd))?, dist)
            }
            None => (
                AggregatedRepresentation {
                    class: r.class,
                    vector: r.vector.clone(),
                    weight: 1.0,
                },
                0.0,
            ),
        };
        out.records.push((r.class, agg.weight, dist));
        out.aggregated.push(agg);
    }
    Ok(out)
}
