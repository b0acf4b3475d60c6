use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Pointwise nonlinearity applied after every extractor layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre- and post-activation values.
    #[inline]
    pub(crate) fn grad(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
            Activation::Identity => 1.0,
        }
    }
}

/// One 1-D convolution layer (valid padding, stride 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub filters: usize,
    pub kernel: usize,
}

/// Shape of a model: optional conv front-end with global max pooling, a stack
/// of dense layers ending in the feature layer, then a linear classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub conv: Vec<ConvLayer>,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub classes: usize,
    #[serde(default)]
    pub activation: Activation,
}

/// Offsets of one conv layer inside the extractor vector.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub w: usize,
    pub b: usize,
}

/// Offsets of one dense layer inside the extractor vector.
#[derive(Clone, Copy, Debug)]
pub(crate) struct DenseShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub w: usize,
    pub b: usize,
}

impl ArchitectureSpec {
    /// Plain MLP without the conv front-end.
    pub fn mlp(
        input_dim: usize,
        hidden: Vec<usize>,
        feature_dim: usize,
        classes: usize,
        activation: Activation,
    ) -> Self {
        Self {
            input_dim,
            conv: Vec::new(),
            hidden,
            feature_dim,
            classes,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.feature_dim == 0 || self.classes == 0 {
            return Err(config_err(
                "input_dim, feature_dim and classes must all be at least 1",
            ));
        }
        if self.hidden.contains(&0) {
            return Err(config_err("hidden layer widths must be at least 1"));
        }
        let mut len = self.input_dim;
        for (i, c) in self.conv.iter().enumerate() {
            if c.filters == 0 || c.kernel == 0 {
                return Err(config_err(format!(
                    "conv layer {i}: filters and kernel must be at least 1"
                )));
            }
            if c.kernel > len {
                return Err(config_err(format!(
                    "conv layer {i}: kernel {} exceeds input length {len}",
                    c.kernel
                )));
            }
            len = len - c.kernel + 1;
        }
        Ok(())
    }

    pub(crate) fn conv_shapes(&self) -> Vec<ConvShape> {
        let mut out = Vec::with_capacity(self.conv.len());
        let (mut in_ch, mut len, mut off) = (1, self.input_dim, 0);
        for c in &self.conv {
            let w = off;
            let b = w + c.filters * in_ch * c.kernel;
            let len_out = len + 1 - c.kernel;
            out.push(ConvShape {
                in_ch,
                out_ch: c.filters,
                kernel: c.kernel,
                len_in: len,
                len_out,
                w,
                b,
            });
            off = b + c.filters;
            in_ch = c.filters;
            len = len_out;
        }
        out
    }

    pub(crate) fn dense_shapes(&self) -> Vec<DenseShape> {
        let conv = self.conv_shapes();
        let mut off = conv.last().map_or(0, |c| c.b + c.out_ch);
        let mut fan_in = conv.last().map_or(self.input_dim, |c| c.out_ch);
        let mut out = Vec::with_capacity(self.hidden.len() + 1);
        for &fan_out in self.hidden.iter().chain(std::iter::once(&self.feature_dim)) {
            let w = off;
            let b = w + fan_out * fan_in;
            out.push(DenseShape {
                fan_in,
                fan_out,
                w,
                b,
            });
            off = b + fan_out;
            fan_in = fan_out;
        }
        out
    }

    pub fn extractor_len(&self) -> usize {
        self.dense_shapes()
            .last()
            .map_or(0, |d| d.b + d.fan_out)
    }

    pub fn classifier_len(&self) -> usize {
        self.classes * self.feature_dim + self.classes
    }

    /// Random extractor: weights uniform in ±1/sqrt(fan_in), biases likewise.
    pub fn init_extractor<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut v = vec![0.0; self.extractor_len()];
        for c in self.conv_shapes() {
            let bound = 1.0 / ((c.in_ch * c.kernel) as f64).sqrt();
            for x in &mut v[c.w..c.b + c.out_ch] {
                *x = rng.random_range(-bound..=bound);
            }
        }
        for d in self.dense_shapes() {
            let bound = 1.0 / (d.fan_in as f64).sqrt();
            for x in &mut v[d.w..d.b + d.fan_out] {
                *x = rng.random_range(-bound..=bound);
            }
        }
        v
    }

    pub fn init_classifier<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let bound = 1.0 / (self.feature_dim as f64).sqrt();
        (0..self.classifier_len())
            .map(|_| rng.random_range(-bound..=bound))
            .collect()
    }

    pub fn init<R: Rng + ?Sized>(self: &Arc<Self>, rng: &mut R) -> ModelParams {
        let extractor = self.init_extractor(rng);
        let classifier = self.init_classifier(rng);
        ModelParams {
            arch: Arc::clone(self),
            extractor,
            classifier,
        }
    }
}

/// Flat parameters of a model, split into extractor and classifier.
///
/// The same type doubles as a gradient, since gradients share the layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    arch: Arc<ArchitectureSpec>,
    extractor: Vec<f64>,
    classifier: Vec<f64>,
}

pub type Gradient = ModelParams;

impl ModelParams {
    pub fn new(
        arch: Arc<ArchitectureSpec>,
        extractor: Vec<f64>,
        classifier: Vec<f64>,
    ) -> Result<Self> {
        arch.validate()?;
        check_len("extractor", extractor.len(), arch.extractor_len())?;
        check_len("classifier", classifier.len(), arch.classifier_len())?;
        if !extractor.iter().chain(&classifier).all(|x| x.is_finite()) {
            return Err(config_err("model parameters must be finite"));
        }
        Ok(Self {
            arch,
            extractor,
            classifier,
        })
    }

    pub fn zeros(arch: Arc<ArchitectureSpec>) -> Self {
        let extractor = vec![0.0; arch.extractor_len()];
        let classifier = vec![0.0; arch.classifier_len()];
        Self {
            arch,
            extractor,
            classifier,
        }
    }

    pub fn arch(&self) -> &Arc<ArchitectureSpec> {
        &self.arch
    }

    pub fn extractor(&self) -> &[f64] {
        &self.extractor
    }

    pub fn classifier(&self) -> &[f64] {
        &self.classifier
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.extractor, &mut self.classifier)
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.extractor, self.classifier)
    }

    pub fn set_extractor(&mut self, extractor: Vec<f64>) -> Result<()> {
        check_len("extractor", extractor.len(), self.arch.extractor_len())?;
        self.extractor = extractor;
        Ok(())
    }

    pub fn set_classifier(&mut self, classifier: Vec<f64>) -> Result<()> {
        check_len("classifier", classifier.len(), self.arch.classifier_len())?;
        self.classifier = classifier;
        Ok(())
    }

    /// Copy of `self` with a different extractor.
    pub fn with_extractor(&self, extractor: &[f64]) -> Result<Self> {
        let mut m = self.clone();
        m.set_extractor(extractor.to_vec())?;
        Ok(m)
    }

    /// Copy of `self` with a different classifier.
    pub fn with_classifier(&self, classifier: &[f64]) -> Result<Self> {
        let mut m = self.clone();
        m.set_classifier(classifier.to_vec())?;
        Ok(m)
    }

    /// Extractor followed by classifier, as one vector.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.extractor);
        v.extend_from_slice(&self.classifier);
        v
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn from_flat(arch: Arc<ArchitectureSpec>, flat: &[f64]) -> Result<Self> {
        let e = arch.extractor_len();
        check_len("flat parameter vector", flat.len(), e + arch.classifier_len())?;
        Self::new(arch, flat[..e].to_vec(), flat[e..].to_vec())
    }

    pub fn len(&self) -> usize {
        self.extractor.len() + self.classifier.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.extractor.iter().chain(&self.classifier).all(|x| x.is_finite())
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.extractor.len() == other.extractor.len()
            && self.classifier.len() == other.classifier.len()
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(config_err(format!(
            "{what} has {got} parameters, architecture expects {want}"
        )));
    }
    Ok(())
}
