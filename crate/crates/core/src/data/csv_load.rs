use std::collections::HashMap;
use std::path::Path;

use super::{ColumnKind, LabeledDataset};
use crate::error::{data_err, Error, Result};
use crate::nn::Matrix;

/// Reads a headed comma-separated file into a [`LabeledDataset`].
///
/// Columns listed in `categorical` are one-hot encoded in place (one indicator
/// per distinct value, in first-appearance order); every other non-label
/// column must parse as a number. Label strings are mapped to dense ids in
/// first-appearance order.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: &str,
    categorical: &[String],
) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let records = reader
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| csv_error(path, e))?;
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| data_err(format!("column '{name}' not found in {}", path.display())))
    };
    let label_idx = find(label_column)?;
    let mut is_cat = vec![false; headers.len()];
    for c in categorical {
        let j = find(c)?;
        if j == label_idx {
            return Err(data_err(format!(
                "column '{c}' cannot be both label and categorical feature"
            )));
        }
        is_cat[j] = true;
    }

    let mut label_ids: HashMap<String, usize> = HashMap::new();
    let mut labels = Vec::with_capacity(records.len());
    for r in &records {
        let next = label_ids.len();
        labels.push(*label_ids.entry(r[label_idx].to_owned()).or_insert(next));
    }

    // Category vocabularies, first-appearance order.
    let mut vocab: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for r in &records {
        for (j, v) in vocab.iter_mut().enumerate().filter(|(j, _)| is_cat[*j]) {
            if !v.iter().any(|x| x == &r[j]) {
                v.push(r[j].to_owned());
            }
        }
    }

    let mut feature_names = Vec::new();
    let mut column_kinds = Vec::new();
    let mut group = 0;
    for (j, h) in headers.iter().enumerate() {
        if j == label_idx {
            continue;
        }
        if is_cat[j] {
            for v in &vocab[j] {
                feature_names.push(format!("{h}={v}"));
                column_kinds.push(ColumnKind::OneHot { group });
            }
            group += 1;
        } else {
            feature_names.push(h.clone());
            column_kinds.push(ColumnKind::Numeric);
        }
    }

    let cols = feature_names.len();
    let mut data = Vec::with_capacity(records.len() * cols);
    for (i, r) in records.iter().enumerate() {
        if r.len() != headers.len() {
            return Err(data_err(format!(
                "row {i}: expected {} cells, found {}",
                headers.len(),
                r.len()
            )));
        }
        for (j, h) in headers.iter().enumerate() {
            if j == label_idx {
                continue;
            }
            if is_cat[j] {
                data.extend(vocab[j].iter().map(|v| if v == &r[j] { 1.0 } else { 0.0 }));
            } else {
                let cell = &r[j];
                let v: f64 = cell.parse().map_err(|_| {
                    data_err(format!(
                        "row {i}: column '{h}': cannot parse '{cell}' as a number"
                    ))
                })?;
                if !v.is_finite() {
                    return Err(data_err(format!("row {i}: column '{h}': non-finite value")));
                }
                data.push(v);
            }
        }
    }

    let ds = LabeledDataset {
        features: Matrix::from_vec(records.len(), cols, data)?,
        classes: label_ids.len(),
        ids: (0..labels.len()).collect(),
        labels,
        feature_names,
        column_kinds,
    };
    ds.validate()?;
    Ok(ds)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            path: path.to_owned(),
            line,
            msg: format!("{other:?}"),
        },
    }
}
