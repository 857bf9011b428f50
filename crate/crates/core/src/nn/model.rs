use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::layer::{Affine, BatchNormState, Layer, BN_MOMENTUM};
use super::matrix::{softmax_in_place, softmax_rows};
use super::Matrix;
use crate::error::{invalid, shape, Error, Result};

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for normalization; running statistics are updated.
    Train,
    /// Stored population statistics; nothing is mutated.
    Eval,
}

/// Layered classifier ending in a softmax head.
///
/// `feature_tap` counts how many layers are applied before the representation
/// used for clustering and embedding export is read off (0 taps the input).
#[derive(Debug)]
pub struct Classifier {
    layers: Vec<Layer>,
    num_classes: usize,
    feature_tap: usize,
    input_width: usize,
    id: u64,
    generation: u64,
}

impl Clone for Classifier {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            num_classes: self.num_classes,
            feature_tap: self.feature_tap,
            input_width: self.input_width,
            id: fresh_id(),
            generation: 0,
        }
    }
}

impl PartialEq for Classifier {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
            && self.num_classes == other.num_classes
            && self.feature_tap == other.feature_tap
            && self.input_width == other.input_width
    }
}

/// Activation record of one forward pass, consumed by [`Classifier::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    model_id: u64,
    generation: u64,
    mode: Mode,
    /// Input to every layer, in order.
    inputs: Vec<Matrix>,
    /// Normalized activations and inverse standard deviations of Train-mode batch norms.
    bn: Vec<Option<(Matrix, Vec<f64>)>>,
    probs: Matrix,
}

impl ForwardCache {
    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn batch_size(&self) -> usize {
        self.probs.rows()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub probs: Matrix,
    pub features: Matrix,
    pub cache: ForwardCache,
}

/// Gradient of one layer's trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad {
    None,
    Affine { weight: Matrix, bias: Vec<f64> },
    BatchNorm { gamma: Vec<f64>, beta: Vec<f64> },
}

/// Gradients for every layer, indexed like [`Classifier::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGrad>,
}

impl GradientSet {
    /// Gradient slices in the same order as [`Classifier::params_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in &self.layers {
            match g {
                LayerGrad::None => {}
                LayerGrad::Affine { weight, bias } => {
                    out.push(weight.as_slice());
                    out.push(bias.as_slice());
                }
                LayerGrad::BatchNorm { gamma, beta } => {
                    out.push(gamma.as_slice());
                    out.push(beta.as_slice());
                }
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0_f64, |m, &x| m.max(x.abs()))
    }
}

/// Per-sample targets for the weighted cross-entropy used in training.
#[derive(Debug, Clone, Copy)]
pub struct LossTarget<'a> {
    pub labels: &'a [usize],
    /// Weight of each sample's loss term; the optimized loss is the weighted sum.
    pub weights: &'a [f64],
    /// Apply a second softmax to the probabilities before the loss.
    pub blur: bool,
}

impl Classifier {
    /// Builds a classifier from explicit layers, validating the architecture.
    pub fn new(input_width: usize, layers: Vec<Layer>, num_classes: usize, feature_tap: usize) -> Result<Self> {
        if input_width == 0 || num_classes == 0 {
            return Err(invalid("input width and class count must be positive"));
        }
        if !matches!(layers.last(), Some(Layer::Softmax)) {
            return Err(invalid("final layer must be a softmax"));
        }
        if feature_tap >= layers.len() {
            return Err(invalid(format!(
                "feature tap {feature_tap} must precede the softmax layer"
            )));
        }
        let mut width = input_width;
        for (i, layer) in layers.iter().enumerate() {
            if matches!(layer, Layer::Softmax) && i + 1 != layers.len() {
                return Err(invalid("softmax may only appear as the final layer"));
            }
            if let Layer::BatchNorm(bn) = layer {
                bn.validate()?;
            }
            width = layer
                .output_width(width)
                .ok_or_else(|| shape(format!("layer {i} ({}) cannot accept width {width}", layer.name())))?;
        }
        if width != num_classes {
            return Err(shape(format!(
                "network emits {width} outputs but {num_classes} classes were declared"
            )));
        }
        Ok(Self {
            layers,
            num_classes,
            feature_tap,
            input_width,
            id: fresh_id(),
            generation: 0,
        })
    }

    /// `input → [Affine(h) → BatchNorm → ReLU]* → Affine(K) → Softmax`, tapping
    /// features at the last hidden ReLU.
    pub fn mlp<R: Rng + ?Sized>(input_width: usize, hidden: &[usize], num_classes: usize, rng: &mut R) -> Result<Self> {
        let mut layers = Vec::new();
        let mut width = input_width;
        for &h in hidden {
            layers.push(Layer::Affine(Affine::init(width, h, rng)));
            layers.push(Layer::BatchNorm(BatchNormState::new(h)));
            layers.push(Layer::Relu);
            width = h;
        }
        layers.push(Layer::Affine(Affine::init(width, num_classes, rng)));
        layers.push(Layer::Softmax);
        let tap = 3 * hidden.len();
        Self::new(input_width, layers, num_classes, tap)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to the layers. Invalidates outstanding forward caches.
    ///
    /// Callers must keep layer widths unchanged.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn feature_tap(&self) -> usize {
        self.feature_tap
    }

    /// Width of the representation at the feature tap.
    pub fn feature_width(&self) -> usize {
        self.layers[..self.feature_tap]
            .iter()
            .fold(self.input_width, |w, l| l.output_width(w).unwrap_or(w))
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::BatchNorm(_)))
    }

    pub fn batch_norms(&self) -> impl Iterator<Item = &BatchNormState> {
        self.layers.iter().filter_map(|l| match l {
            Layer::BatchNorm(bn) => Some(bn),
            _ => None,
        })
    }

    /// Trainable parameter slices: weight and bias of every affine layer, gamma
    /// and beta of every batch norm, in layer order. Invalidates forward caches.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Affine(a) => {
                    out.push(a.weight.as_mut_slice());
                    out.push(a.bias.as_mut_slice());
                }
                Layer::BatchNorm(bn) => {
                    out.push(bn.gamma.as_mut_slice());
                    out.push(bn.beta.as_mut_slice());
                }
                Layer::Relu | Layer::Softmax => {}
            }
        }
        out
    }

    /// Trainable parameter slices in [`Self::params_mut`] order.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Affine(a) => {
                    out.push(a.weight.as_slice());
                    out.push(a.bias.as_slice());
                }
                Layer::BatchNorm(bn) => {
                    out.push(bn.gamma.as_slice());
                    out.push(bn.beta.as_slice());
                }
                Layer::Relu | Layer::Softmax => {}
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// True when both models have the same layer kinds and widths.
    pub fn same_structure(&self, other: &Classifier) -> bool {
        self.input_width == other.input_width
            && self.num_classes == other.num_classes
            && self.feature_tap == other.feature_tap
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| match (a, b) {
                (Layer::Affine(x), Layer::Affine(y)) => x.weight.shape() == y.weight.shape(),
                (Layer::BatchNorm(x), Layer::BatchNorm(y)) => x.width() == y.width(),
                (Layer::Relu, Layer::Relu) | (Layer::Softmax, Layer::Softmax) => true,
                _ => false,
            })
    }

    fn check_batch(&self, batch: &Matrix) -> Result<()> {
        if batch.rows() == 0 {
            return Err(invalid("empty batch"));
        }
        if batch.cols() != self.input_width {
            return Err(shape(format!(
                "batch has {} features, model expects {}",
                batch.cols(),
                self.input_width
            )));
        }
        batch.ensure_finite("batch")
    }

    /// Runs the network. In `Train` mode batch norms normalize with batch
    /// statistics and fold them into the running statistics with momentum 0.1.
    pub fn forward(&mut self, batch: &Matrix, mode: Mode) -> Result<ForwardOutput> {
        match mode {
            Mode::Train => self.forward_train(batch, BN_MOMENTUM),
            Mode::Eval => self.forward_eval(batch),
        }
    }

    /// Eval-mode forward pass; a pure function of the model and batch.
    pub fn forward_eval(&self, batch: &Matrix) -> Result<ForwardOutput> {
        self.check_batch(batch)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for layer in &self.layers {
            let y = match layer {
                Layer::Affine(a) => affine_forward(a, &x),
                Layer::BatchNorm(bn) => {
                    let inv_std: Vec<f64> = bn.var.iter().map(|v| 1.0 / (v + bn.epsilon).sqrt()).collect();
                    let mut y = x.clone();
                    for i in 0..y.rows() {
                        for (j, v) in y.row_mut(i).iter_mut().enumerate() {
                            *v = bn.gamma[j] * (*v - bn.mean[j]) * inv_std[j] + bn.beta[j];
                        }
                    }
                    y
                }
                Layer::Relu => relu(&x),
                Layer::Softmax => softmax_rows(&x),
            };
            inputs.push(std::mem::replace(&mut x, y));
        }
        Ok(self.finish(inputs, vec![None; self.layers.len()], x, Mode::Eval))
    }

    /// Train-mode forward pass with an explicit running-statistics momentum.
    ///
    /// `momentum` is the weight given to the current batch statistics.
    pub fn forward_train(&mut self, batch: &Matrix, momentum: f64) -> Result<ForwardOutput> {
        self.check_batch(batch)?;
        if !(0.0..=1.0).contains(&momentum) {
            return Err(invalid(format!("momentum {momentum} outside [0, 1]")));
        }
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut bn_cache = vec![None; n];
        let mut x = batch.clone();
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            let y = match layer {
                Layer::Affine(a) => affine_forward(a, &x),
                Layer::BatchNorm(bn) => {
                    let mean = x.column_means();
                    let var = x.column_variances(&mean);
                    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.epsilon).sqrt()).collect();
                    let mut x_hat = x.clone();
                    for i in 0..x_hat.rows() {
                        for (j, v) in x_hat.row_mut(i).iter_mut().enumerate() {
                            *v = (*v - mean[j]) * inv_std[j];
                        }
                    }
                    let mut y = x_hat.clone();
                    for i in 0..y.rows() {
                        for (j, v) in y.row_mut(i).iter_mut().enumerate() {
                            *v = bn.gamma[j] * *v + bn.beta[j];
                        }
                    }
                    bn.absorb(&mean, &var, momentum);
                    bn_cache[idx] = Some((x_hat, inv_std));
                    y
                }
                Layer::Relu => relu(&x),
                Layer::Softmax => softmax_rows(&x),
            };
            inputs.push(std::mem::replace(&mut x, y));
        }
        Ok(self.finish(inputs, bn_cache, x, Mode::Train))
    }

    fn finish(
        &self,
        inputs: Vec<Matrix>,
        bn: Vec<Option<(Matrix, Vec<f64>)>>,
        probs: Matrix,
        mode: Mode,
    ) -> ForwardOutput {
        let features = if self.feature_tap < inputs.len() {
            inputs[self.feature_tap].clone()
        } else {
            probs.clone()
        };
        ForwardOutput {
            probs: probs.clone(),
            features,
            cache: ForwardCache {
                model_id: self.id,
                generation: self.generation,
                mode,
                inputs,
                bn,
                probs,
            },
        }
    }

    /// Eval-mode class probabilities.
    pub fn predict_proba(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward_eval(batch)?.probs)
    }

    /// Eval-mode predicted labels, ties broken toward the smaller class index.
    pub fn predict(&self, batch: &Matrix) -> Result<Vec<usize>> {
        Ok(self.predict_proba(batch)?.argmax_rows())
    }

    /// Gradient of the mean cross-entropy over the cached batch.
    pub fn backward(&self, cache: &ForwardCache, labels: &[usize]) -> Result<GradientSet> {
        let weights = vec![1.0 / cache.batch_size() as f64; cache.batch_size()];
        self.backward_with(
            cache,
            LossTarget {
                labels,
                weights: &weights,
                blur: false,
            },
        )
    }

    /// Gradient of `Σᵢ wᵢ · CE(pᵢ, yᵢ)` where `pᵢ` is optionally blurred by a
    /// second softmax.
    pub fn backward_with(&self, cache: &ForwardCache, target: LossTarget<'_>) -> Result<GradientSet> {
        if cache.model_id != self.id || cache.generation != self.generation {
            return Err(Error::InvalidState(
                "forward cache does not belong to the current model state".into(),
            ));
        }
        if cache.mode != Mode::Train {
            return Err(Error::InvalidState(
                "backward requires a Train-mode forward cache".into(),
            ));
        }
        let b = cache.batch_size();
        if target.labels.len() != b || target.weights.len() != b {
            return Err(shape(format!(
                "{} labels and {} weights for a batch of {b}",
                target.labels.len(),
                target.weights.len()
            )));
        }
        if let Some(&bad) = target.labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(invalid(format!(
                "label {bad} out of range for {} classes",
                self.num_classes
            )));
        }

        // Gradient with respect to the logits feeding the softmax head.
        let mut grad = Matrix::zeros(b, self.num_classes);
        for i in 0..b {
            let p = cache.probs.row(i);
            let y = target.labels[i];
            let w = target.weights[i];
            let g = grad.row_mut(i);
            if target.blur {
                let mut q = p.to_vec();
                softmax_in_place(&mut q);
                q[y] -= 1.0;
                let dot: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
                for j in 0..g.len() {
                    g[j] = w * p[j] * (q[j] - dot);
                }
            } else {
                for j in 0..g.len() {
                    g[j] = w * (p[j] - if j == y { 1.0 } else { 0.0 });
                }
            }
        }

        let n = self.layers.len();
        let mut grads = vec![LayerGrad::None; n];
        for idx in (0..n - 1).rev() {
            let x = &cache.inputs[idx];
            grad = match &self.layers[idx] {
                Layer::Affine(a) => {
                    let dw = x.t_matmul(&grad)?;
                    let db = grad.column_sums();
                    let dx = grad.matmul_t(&a.weight)?;
                    grads[idx] = LayerGrad::Affine { weight: dw, bias: db };
                    dx
                }
                Layer::BatchNorm(bn) => {
                    let (x_hat, inv_std) = cache.bn[idx]
                        .as_ref()
                        .ok_or_else(|| Error::InvalidState("missing batch-norm cache".into()))?;
                    let width = bn.width();
                    let mut dgamma = vec![0.0; width];
                    let mut dbeta = vec![0.0; width];
                    for i in 0..b {
                        for j in 0..width {
                            dgamma[j] += grad[(i, j)] * x_hat[(i, j)];
                            dbeta[j] += grad[(i, j)];
                        }
                    }
                    let bf = b as f64;
                    let mut dx = Matrix::zeros(b, width);
                    for j in 0..width {
                        // dxhat = dy·γ; dx = inv_std/B · (B·dxhat − Σdxhat − x̂·Σ(dxhat·x̂))
                        let sum_dxhat = bn.gamma[j] * dbeta[j];
                        let sum_dxhat_xhat = bn.gamma[j] * dgamma[j];
                        for i in 0..b {
                            let dxhat = grad[(i, j)] * bn.gamma[j];
                            dx[(i, j)] = inv_std[j] / bf * (bf * dxhat - sum_dxhat - x_hat[(i, j)] * sum_dxhat_xhat);
                        }
                    }
                    grads[idx] = LayerGrad::BatchNorm {
                        gamma: dgamma,
                        beta: dbeta,
                    };
                    dx
                }
                Layer::Relu => {
                    let mut dx = grad;
                    for (d, &v) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    dx
                }
                Layer::Softmax => unreachable!("softmax is validated to be the final layer"),
            };
        }
        Ok(GradientSet { layers: grads })
    }
}

fn affine_forward(a: &Affine, x: &Matrix) -> Matrix {
    let mut y = x.matmul(&a.weight).expect("widths validated at construction");
    for i in 0..y.rows() {
        for (v, &b) in y.row_mut(i).iter_mut().zip(&a.bias) {
            *v += b;
        }
    }
    y
}

fn relu(x: &Matrix) -> Matrix {
    let mut y = x.clone();
    y.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}
