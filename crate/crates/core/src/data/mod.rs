//! Dataset ingestion, preprocessing, non-IID partitioning and splitting.

mod csv_load;
mod partition;
mod synth;

pub use csv_load::load_csv;
pub use partition::{
    class_count_table, class_share_ratios, dirichlet_partition, sample_dirichlet,
    split_4_1_1, PartitionSpec,
};
pub use synth::{synth_clusters, SynthData, SynthSpec};

use crate::error::{data_err, Result};
use crate::nn::{Batch, Matrix};

/// How a feature column came to be.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ColumnKind {
    Numeric,
    /// One indicator column of the categorical feature with index `group`.
    OneHot { group: usize },
}

/// Feature matrix plus dense integer labels.
///
/// `ids` carries the original row index of every row so partitions and
/// splits can be audited for loss or duplication.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub feature_names: Vec<String>,
    pub column_kinds: Vec<ColumnKind>,
    pub ids: Vec<usize>,
}

impl LabeledDataset {
    /// All-numeric dataset with ids `0..rows` and generated column names.
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let cols = features.cols();
        let ids = (0..labels.len()).collect();
        let ds = Self {
            feature_names: (0..cols).map(|j| format!("x{j}")).collect(),
            column_kinds: vec![ColumnKind::Numeric; cols],
            features,
            labels,
            classes,
            ids,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.features.rows() != n || self.ids.len() != n {
            return Err(data_err(format!(
                "row counts disagree: {} feature rows, {n} labels, {} ids",
                self.features.rows(),
                self.ids.len()
            )));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(data_err(format!(
                "label {l} out of range for {} classes",
                self.classes
            )));
        }
        if self.features.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(data_err("feature matrix contains non-finite values"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows at `idx`, in that order, keeping ids and schema.
    pub fn select(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            feature_names: self.feature_names.clone(),
            column_kinds: self.column_kinds.clone(),
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
        }
    }

    /// Rows at `idx` as a training batch.
    pub fn batch(&self, idx: &[usize]) -> Result<Batch> {
        Batch::new(
            self.features.select_rows(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// The whole dataset as one batch.
    pub fn as_batch(&self) -> Result<Batch> {
        Batch::new(self.features.clone(), self.labels.clone())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

/// Per-client train/validation/test partition.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientDataSplit {
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
    pub test: LabeledDataset,
}

impl ClientDataSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mean and population standard deviation applied to one numeric column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColumnScale {
    pub column: usize,
    pub mean: f64,
    pub std: f64,
}

/// Z-scores every numeric column with population statistics.
///
/// One-hot columns are left alone. Constant columns map to all zeros.
pub fn standardize(ds: &LabeledDataset) -> Result<(LabeledDataset, Vec<ColumnScale>)> {
    if ds.is_empty() {
        return Err(crate::Error::EmptyDataset);
    }
    let n = ds.len() as f64;
    let mut out = ds.clone();
    let mut scales = Vec::new();
    for (j, kind) in ds.column_kinds.iter().enumerate() {
        if *kind != ColumnKind::Numeric {
            continue;
        }
        let mean = ds.features.iter_rows().map(|r| r[j]).sum::<f64>() / n;
        let var = ds
            .features
            .iter_rows()
            .map(|r| (r[j] - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        for i in 0..ds.len() {
            let v = ds.features.get(i, j);
            out.features
                .set(i, j, if std > 0.0 { (v - mean) / std } else { 0.0 });
        }
        scales.push(ColumnScale { column: j, mean, std });
    }
    Ok((out, scales))
}
