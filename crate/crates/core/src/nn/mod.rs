//! Minimal differentiable model with an explicit extractor/classifier split.
//!
//! Everything is plain `f64` loops over flat parameter vectors; the layout is
//! described by [`ArchitectureSpec`]. Forward passes are pure, and the
//! gradient from [`backward`] is the exact gradient of the mean softmax
//! cross-entropy over the batch.

mod model;
mod tensor;

pub use model::{Activation, ArchitectureSpec, ConvLayer, Gradient, ModelParams};
pub use tensor::{Batch, Matrix};

use crate::error::{config_err, data_err, Error, Result};
use model::{ConvShape, DenseShape};

/// Intermediate values of one sample's pass through the extractor.
struct Trace {
    conv_pre: Vec<Vec<f64>>,
    conv_post: Vec<Vec<f64>>,
    pool_arg: Vec<usize>,
    dense_in: Vec<Vec<f64>>,
    dense_pre: Vec<Vec<f64>>,
    dense_post: Vec<Vec<f64>>,
}

impl Trace {
    fn features(&self) -> &[f64] {
        self.dense_post.last().expect("at least one dense layer")
    }
}

struct Extractor<'a> {
    arch: &'a ArchitectureSpec,
    conv: Vec<ConvShape>,
    dense: Vec<DenseShape>,
    params: &'a [f64],
}

impl<'a> Extractor<'a> {
    fn new(arch: &'a ArchitectureSpec, params: &'a [f64]) -> Self {
        Self {
            arch,
            conv: arch.conv_shapes(),
            dense: arch.dense_shapes(),
            params,
        }
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let act = self.arch.activation;
        let p = self.params;
        let mut conv_pre = Vec::with_capacity(self.conv.len());
        let mut conv_post: Vec<Vec<f64>> = Vec::with_capacity(self.conv.len());
        for c in &self.conv {
            let input: &[f64] = conv_post.last().map_or(x, |v| v.as_slice());
            let mut z = vec![0.0; c.out_ch * c.len_out];
            for f in 0..c.out_ch {
                let bias = p[c.b + f];
                for pos in 0..c.len_out {
                    let mut s = bias;
                    for ch in 0..c.in_ch {
                        let w = &p[c.w + (f * c.in_ch + ch) * c.kernel..][..c.kernel];
                        let a = &input[ch * c.len_in + pos..][..c.kernel];
                        s += w.iter().zip(a).map(|(w, a)| w * a).sum::<f64>();
                    }
                    z[f * c.len_out + pos] = s;
                }
            }
            conv_post.push(z.iter().map(|&v| act.apply(v)).collect());
            conv_pre.push(z);
        }

        let mut pool_arg = Vec::new();
        let pooled: Vec<f64> = match (self.conv.last(), conv_post.last()) {
            (Some(c), Some(post)) => (0..c.out_ch)
                .map(|f| {
                    let row = &post[f * c.len_out..(f + 1) * c.len_out];
                    let mut best = 0;
                    for (i, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = i;
                        }
                    }
                    pool_arg.push(best);
                    row[best]
                })
                .collect(),
            _ => x.to_vec(),
        };

        let mut dense_in = Vec::with_capacity(self.dense.len());
        let mut dense_pre = Vec::with_capacity(self.dense.len());
        let mut dense_post = Vec::with_capacity(self.dense.len());
        let mut a = pooled;
        for d in &self.dense {
            let z: Vec<f64> = (0..d.fan_out)
                .map(|o| {
                    let w = &p[d.w + o * d.fan_in..][..d.fan_in];
                    p[d.b + o] + w.iter().zip(&a).map(|(w, x)| w * x).sum::<f64>()
                })
                .collect();
            let post: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            dense_in.push(std::mem::replace(&mut a, post.clone()));
            dense_pre.push(z);
            dense_post.push(post);
        }
        Trace {
            conv_pre,
            conv_post,
            pool_arg,
            dense_in,
            dense_pre,
            dense_post,
        }
    }

    /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(features).
    fn backprop(&self, x: &[f64], t: &Trace, d_feat: &[f64], grad: &mut [f64]) {
        let act = self.arch.activation;
        let p = self.params;
        let mut d_post = d_feat.to_vec();
        for (li, d) in self.dense.iter().enumerate().rev() {
            let pre = &t.dense_pre[li];
            let post = &t.dense_post[li];
            let input = &t.dense_in[li];
            let d_pre: Vec<f64> = (0..d.fan_out)
                .map(|o| d_post[o] * act.grad(pre[o], post[o]))
                .collect();
            let mut d_in = vec![0.0; d.fan_in];
            for (o, &g) in d_pre.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad[d.b + o] += g;
                let row = d.w + o * d.fan_in;
                for i in 0..d.fan_in {
                    grad[row + i] += g * input[i];
                    d_in[i] += p[row + i] * g;
                }
            }
            d_post = d_in;
        }

        let Some(last) = self.conv.last() else {
            return;
        };
        // Route pooled gradients back to the max positions.
        let mut d_conv = vec![0.0; last.out_ch * last.len_out];
        for (f, &pos) in t.pool_arg.iter().enumerate() {
            d_conv[f * last.len_out + pos] = d_post[f];
        }
        for (li, c) in self.conv.iter().enumerate().rev() {
            let input: &[f64] = if li == 0 { x } else { &t.conv_post[li - 1] };
            let pre = &t.conv_pre[li];
            let post = &t.conv_post[li];
            let mut d_in = vec![0.0; if li == 0 { 0 } else { c.in_ch * c.len_in }];
            for f in 0..c.out_ch {
                for pos in 0..c.len_out {
                    let idx = f * c.len_out + pos;
                    let g = d_conv[idx] * act.grad(pre[idx], post[idx]);
                    if g == 0.0 {
                        continue;
                    }
                    grad[c.b + f] += g;
                    for ch in 0..c.in_ch {
                        let w0 = c.w + (f * c.in_ch + ch) * c.kernel;
                        let a0 = ch * c.len_in + pos;
                        for j in 0..c.kernel {
                            grad[w0 + j] += g * input[a0 + j];
                            if li > 0 {
                                d_in[a0 + j] += p[w0 + j] * g;
                            }
                        }
                    }
                }
            }
            d_conv = d_in;
        }
    }
}

fn classifier_forward(classes: usize, dim: usize, theta: &[f64], f: &[f64]) -> Vec<f64> {
    let bias = classes * dim;
    (0..classes)
        .map(|s| {
            let w = &theta[s * dim..(s + 1) * dim];
            theta[bias + s] + w.iter().zip(f).map(|(w, x)| w * x).sum::<f64>()
        })
        .collect()
}

/// Accumulates classifier gradients; returns d(loss)/d(features).
fn classifier_backprop(
    classes: usize,
    dim: usize,
    theta: &[f64],
    f: &[f64],
    d_logits: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    let bias = classes * dim;
    let mut d_f = vec![0.0; dim];
    for (s, &g) in d_logits.iter().enumerate() {
        grad[bias + s] += g;
        for j in 0..dim {
            grad[s * dim + j] += g * f[j];
            d_f[j] += theta[s * dim + j] * g;
        }
    }
    d_f
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax of one row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|x| (x - lse).exp()).collect()
}

fn check_inputs(arch: &ArchitectureSpec, inputs: &Matrix) -> Result<()> {
    if inputs.rows() > 0 && inputs.cols() != arch.input_dim {
        return Err(config_err(format!(
            "input has {} columns, architecture expects {}",
            inputs.cols(),
            arch.input_dim
        )));
    }
    Ok(())
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(data_err(format!(
            "label {l} at row {i} is out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Extractor output for every row of `inputs` (rows x feature_dim).
pub fn extract_features(model: &ModelParams, inputs: &Matrix) -> Result<Matrix> {
    extract_with(model.arch(), model.extractor(), inputs)
}

/// Like [`extract_features`] but with a bare extractor vector.
pub fn extract_with(arch: &ArchitectureSpec, extractor: &[f64], inputs: &Matrix) -> Result<Matrix> {
    check_inputs(arch, inputs)?;
    if extractor.len() != arch.extractor_len() {
        return Err(config_err(format!(
            "extractor has {} parameters, architecture expects {}",
            extractor.len(),
            arch.extractor_len()
        )));
    }
    let ex = Extractor::new(arch, extractor);
    let mut out = Matrix::zeros(inputs.rows(), arch.feature_dim);
    for (i, x) in inputs.iter_rows().enumerate() {
        out.row_mut(i).copy_from_slice(ex.trace(x).features());
    }
    Ok(out)
}

pub fn forward_features(model: &ModelParams, batch: &Batch) -> Result<Matrix> {
    extract_features(model, &batch.inputs)
}

/// Classifier applied to precomputed features (rows x classes).
pub fn classify_features(
    arch: &ArchitectureSpec,
    classifier: &[f64],
    features: &Matrix,
) -> Result<Matrix> {
    if classifier.len() != arch.classifier_len() {
        return Err(config_err(format!(
            "classifier has {} parameters, architecture expects {}",
            classifier.len(),
            arch.classifier_len()
        )));
    }
    if features.rows() > 0 && features.cols() != arch.feature_dim {
        return Err(config_err(format!(
            "features have {} columns, classifier expects {}",
            features.cols(),
            arch.feature_dim
        )));
    }
    let mut out = Matrix::zeros(features.rows(), arch.classes);
    for (i, f) in features.iter_rows().enumerate() {
        out.row_mut(i)
            .copy_from_slice(&classifier_forward(arch.classes, arch.feature_dim, classifier, f));
    }
    Ok(out)
}

pub fn logits(model: &ModelParams, inputs: &Matrix) -> Result<Matrix> {
    let feats = extract_features(model, inputs)?;
    classify_features(model.arch(), model.classifier(), &feats)
}

pub fn forward_logits(model: &ModelParams, batch: &Batch) -> Result<Matrix> {
    logits(model, &batch.inputs)
}

/// Mean softmax cross-entropy of `logits` against `labels`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    if logits.rows() != labels.len() {
        return Err(data_err(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_labels(labels, logits.cols())?;
    let total: f64 = logits
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| log_sum_exp(row) - row[y])
        .sum();
    Ok((total / labels.len() as f64).max(0.0))
}

/// Mean cross-entropy of the full model on a batch.
pub fn loss(model: &ModelParams, batch: &Batch) -> Result<f64> {
    cross_entropy(&forward_logits(model, batch)?, &batch.labels)
}

/// Gradient of the mean cross-entropy with respect to every parameter.
pub fn backward(model: &ModelParams, batch: &Batch) -> Result<Gradient> {
    let arch = model.arch();
    check_inputs(arch, &batch.inputs)?;
    check_labels(&batch.labels, arch.classes)?;
    let ex = Extractor::new(arch, model.extractor());
    let mut grad = ModelParams::zeros(arch.clone());
    let (g_ext, g_cls) = grad.parts_mut();
    let scale = 1.0 / batch.len() as f64;
    for (x, &y) in batch.inputs.iter_rows().zip(&batch.labels) {
        let t = ex.trace(x);
        let f = t.features();
        let mut d_logits =
            softmax(&classifier_forward(arch.classes, arch.feature_dim, model.classifier(), f));
        d_logits[y] -= 1.0;
        d_logits.iter_mut().for_each(|g| *g *= scale);
        let d_f = classifier_backprop(
            arch.classes,
            arch.feature_dim,
            model.classifier(),
            f,
            &d_logits,
            g_cls,
        );
        ex.backprop(x, &t, &d_f, g_ext);
    }
    Ok(grad)
}

/// Gradient of the mean cross-entropy with respect to classifier parameters
/// only, for (feature, label) pairs.
pub fn classifier_backward(
    arch: &ArchitectureSpec,
    classifier: &[f64],
    features: &Matrix,
    labels: &[usize],
) -> Result<Vec<f64>> {
    if features.rows() != labels.len() || labels.is_empty() {
        return Err(data_err(format!(
            "{} feature rows for {} labels",
            features.rows(),
            labels.len()
        )));
    }
    check_labels(labels, arch.classes)?;
    let logits = classify_features(arch, classifier, features)?;
    let mut grad = vec![0.0; classifier.len()];
    let scale = 1.0 / labels.len() as f64;
    for (i, &y) in labels.iter().enumerate() {
        let mut d = softmax(logits.row(i));
        d[y] -= 1.0;
        d.iter_mut().for_each(|g| *g *= scale);
        classifier_backprop(
            arch.classes,
            arch.feature_dim,
            classifier,
            features.row(i),
            &d,
            &mut grad,
        );
    }
    Ok(grad)
}

/// `params - lr * grad`, elementwise.
pub fn sgd_step(model: &ModelParams, grad: &Gradient, lr: f64) -> Result<ModelParams> {
    if !model.same_layout(grad) {
        return Err(config_err("gradient layout does not match model layout"));
    }
    if !(lr >= 0.0) {
        return Err(config_err(format!("learning rate must be >= 0, got {lr}")));
    }
    let mut out = model.clone();
    let (e, c) = out.parts_mut();
    axpy(e, grad.extractor(), -lr);
    axpy(c, grad.classifier(), -lr);
    Ok(out)
}

/// `y += a * x`.
pub(crate) fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

/// Euclidean distance between two flat vectors.
pub fn param_l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(config_err(format!(
            "cannot compare vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Index of the largest logit per row; ties resolve to the lowest class.
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    logits
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Fraction of rows whose predicted class equals the label.
pub fn accuracy(model: &ModelParams, inputs: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pred = argmax_rows(&logits(model, inputs)?);
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn arch(input: usize, hidden: Vec<usize>, feat: usize, classes: usize) -> Arc<ArchitectureSpec> {
        Arc::new(ArchitectureSpec::mlp(input, hidden, feat, classes, Activation::Tanh))
    }

    fn random_batch(rng: &mut ChaCha8Rng, rows: usize, dim: usize, classes: usize) -> Batch {
        let data = (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = (0..rows).map(|_| rng.random_range(0..classes)).collect();
        Batch::new(Matrix::from_vec(rows, dim, data).unwrap(), labels).unwrap()
    }

    #[test]
    fn zero_extractor_gives_activation_of_zero() {
        let a = arch(3, vec![4], 2, 2);
        let m = ModelParams::zeros(a);
        let b = Batch::new(Matrix::from_rows(&[[1.0, -2.0, 3.0]]).unwrap(), vec![0]).unwrap();
        let f = forward_features(&m, &b).unwrap();
        assert_eq!(f.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let a = Arc::new(ArchitectureSpec::mlp(3, vec![], 3, 2, Activation::Identity));
        let mut e = vec![0.0; a.extractor_len()];
        for i in 0..3 {
            e[i * 3 + i] = 1.0;
        }
        let m = ModelParams::new(a.clone(), e, vec![0.0; a.classifier_len()]).unwrap();
        let x = [0.5, -1.5, 2.0];
        let b = Batch::new(Matrix::from_rows(&[x]).unwrap(), vec![1]).unwrap();
        assert_eq!(forward_features(&m, &b).unwrap().row(0), &x);
    }

    #[test]
    fn zero_classifier_gives_uniform_softmax() {
        let a = arch(3, vec![4], 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = a.init(&mut rng).with_classifier(&vec![0.0; a.classifier_len()]).unwrap();
        let b = random_batch(&mut rng, 5, 3, 4);
        let l = forward_logits(&m, &b).unwrap();
        for row in l.iter_rows() {
            assert!(row.iter().all(|&v| v == 0.0));
            assert!(softmax(row).iter().all(|p| (p - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn single_class_softmax_is_one() {
        let a = arch(2, vec![], 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = a.init(&mut rng);
        let b = random_batch(&mut rng, 3, 2, 1);
        let l = forward_logits(&m, &b).unwrap();
        for row in l.iter_rows() {
            assert_eq!(softmax(row), vec![1.0]);
        }
        assert!(loss(&m, &b).unwrap().abs() < 1e-15);
    }

    #[test]
    fn uniform_logits_give_ln_classes() {
        for s in [2usize, 5, 10] {
            let l = Matrix::from_vec(3, s, vec![0.7; 3 * s]).unwrap();
            let ce = cross_entropy(&l, &[0, s - 1, 1 % s]).unwrap();
            assert!((ce - (s as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn large_margin_drives_loss_to_zero() {
        let l = Matrix::from_rows(&[[1e3, 0.0, 0.0]]).unwrap();
        assert!(cross_entropy(&l, &[0]).unwrap() < 1e-12);
    }

    #[test]
    fn cross_entropy_hand_computed() {
        let l = Matrix::from_rows(&[[2.0, 1.0, 0.0]]).unwrap();
        let z = 2f64.exp() + 1f64.exp() + 1.0;
        let want = -(2f64.exp() / z).ln();
        assert!((cross_entropy(&l, &[0]).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn out_of_range_label_is_data_error() {
        let l = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        assert!(matches!(cross_entropy(&l, &[2]), Err(Error::Data(_))));
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let a = arch(3, vec![], 2, 2);
        let m = ModelParams::zeros(a);
        let b = Batch::new(Matrix::zeros(1, 4), vec![0]).unwrap();
        assert!(matches!(forward_features(&m, &b), Err(Error::Config(_))));
    }

    #[test]
    fn balanced_labels_cancel_bias_gradient_at_zero_classifier() {
        let a = arch(3, vec![3], 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = a.init(&mut rng).with_classifier(&vec![0.0; a.classifier_len()]).unwrap();
        let x = [0.3, -0.2, 0.9];
        let b = Batch::new(Matrix::from_rows(&[x, x]).unwrap(), vec![0, 1]).unwrap();
        let g = backward(&m, &b).unwrap();
        let bias = &g.classifier()[a.classes * a.feature_dim..];
        assert!(bias.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let a = arch(4, vec![5], 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = a.init(&mut rng);
        let b = random_batch(&mut rng, 6, 4, 3);
        let idx: Vec<usize> = (0..6).chain(0..6).collect();
        let labels = idx.iter().map(|&i| b.labels[i]).collect();
        let b2 = Batch::new(b.inputs.select_rows(&idx), labels).unwrap();
        let g1 = backward(&m, &b).unwrap().flatten();
        let g2 = backward(&m, &b2).unwrap().flatten();
        for (x, y) in g1.iter().zip(&g2) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_step_cases() {
        let a = Arc::new(ArchitectureSpec::mlp(1, vec![], 1, 1, Activation::Identity));
        // extractor [w, b], classifier [w, b]
        let m = ModelParams::new(a.clone(), vec![1.0, 2.0], vec![3.0, 4.0]).unwrap();
        let g = ModelParams::new(a.clone(), vec![0.5, -1.0], vec![0.0, 0.0]).unwrap();
        let out = sgd_step(&m, &g, 0.1).unwrap();
        assert!((out.extractor()[0] - 0.95).abs() < 1e-15);
        assert!((out.extractor()[1] - 2.1).abs() < 1e-15);
        assert_eq!(sgd_step(&m, &g, 0.0).unwrap(), m);
        assert_eq!(sgd_step(&m, &ModelParams::zeros(a), 0.3).unwrap(), m);
        assert!(sgd_step(&m, &g, -1.0).is_err());
    }

    #[test]
    fn distance_cases() {
        assert_eq!(param_l2_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(param_l2_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(param_l2_distance(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn accuracy_counts_hits() {
        let a = Arc::new(ArchitectureSpec::mlp(1, vec![], 1, 2, Activation::Identity));
        // classifier favours class 0 through its bias
        let m = ModelParams::new(a, vec![0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let x = Matrix::zeros(4, 1);
        assert_eq!(accuracy(&m, &x, &[0, 0, 0, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&m, &x, &[0, 1, 1, 0]).unwrap(), 0.5);
    }
}
