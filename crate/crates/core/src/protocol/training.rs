use rand::seq::SliceRandom;

use crate::data::LabeledDataset;
use crate::error::{config_err, Result};
use crate::nn::{self, ArchitectureSpec, Matrix, ModelParams};
use crate::representation::AggregatedRepresentation;
use crate::seed::SimRng;

/// `epochs` passes of shuffled minibatch SGD over `data`.
pub fn local_sgd(
    model: &ModelParams,
    data: &LabeledDataset,
    lr: f64,
    batch_size: usize,
    epochs: usize,
    rng: &mut SimRng,
) -> Result<ModelParams> {
    if batch_size == 0 {
        return Err(config_err("batch size must be at least 1"));
    }
    let mut model = model.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let batch = data.batch(chunk)?;
            let grad = nn::backward(&model, &batch)?;
            model = nn::sgd_step(&model, &grad, lr)?;
        }
    }
    Ok(model)
}

/// Server-side classifier training on pooled (representation, class) pairs:
/// `epochs` shuffled passes in batches of `batch_size`.
pub fn train_global_classifier(
    arch: &ArchitectureSpec,
    classifier: &[f64],
    reps: &[AggregatedRepresentation],
    lr: f64,
    epochs: usize,
    batch_size: usize,
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    if reps.is_empty() {
        log::warn!("no representations received; global classifier left unchanged");
        return Ok(classifier.to_vec());
    }
    if batch_size == 0 {
        return Err(config_err("batch size must be at least 1"));
    }
    let features = Matrix::from_rows(&reps.iter().map(|r| r.vector.as_slice()).collect::<Vec<_>>())?;
    let labels: Vec<usize> = reps.iter().map(|r| r.class).collect();
    let mut theta = classifier.to_vec();
    let mut order: Vec<usize> = (0..reps.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let f = features.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let g = nn::classifier_backward(arch, &theta, &f, &y)?;
            nn::axpy(&mut theta, &g, -lr);
        }
    }
    Ok(theta)
}
