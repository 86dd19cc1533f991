//! A small dense multi-layer perceptron engine.
//!
//! Parameters live in one flat [`ParamVector`] so that federated aggregation,
//! attacks and distance computations can treat a whole model as a vector.
//! Layer `l` occupies a contiguous block laid out as its weight matrix
//! (`fan_in x fan_out`, row-major) followed by its bias vector.
//!
//! Hidden layers use ReLU, the output layer a max-shifted softmax. Per-sample
//! losses are plain cross-entropy with probabilities clamped to
//! `[PROB_EPS, 1 - PROB_EPS]`; weight decay enters only the gradient.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Probability clamp applied before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// Rows per chunk when running inference over a whole dataset.
const INFERENCE_CHUNK: usize = 512;

/// Layer widths of a ReLU MLP with a softmax head, e.g. `[784, 512, 10]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    layer_sizes: Vec<usize>,
}

impl ModelSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least an input and an output layer, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "layer sizes must be positive, got {layer_sizes:?}"
            )));
        }
        Ok(Self { layer_sizes })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Total number of scalar parameters (weights and biases).
    pub fn n_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// `(weight_offset, bias_offset, fan_in, fan_out)` of every layer.
    fn layout(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weight = offset;
                let bias = weight + fan_in * fan_out;
                offset = bias + fan_out;
                (weight, bias, fan_in, fan_out)
            })
            .collect()
    }
}

/// Flattened parameters of one model (a client's local model or the global one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.0[..])
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl std::ops::Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Local SGD hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            learning_rate: 0.01,
            weight_decay: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be a finite non-negative number, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be finite and non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Stateless MLP engine bound to one [`ModelSpec`].
#[derive(Debug, Clone)]
pub struct Mlp {
    spec: ModelSpec,
    layout: Vec<(usize, usize, usize, usize)>,
}

/// Intermediate activations kept for backpropagation.
struct ForwardTrace {
    /// `activations[0]` is the input, `activations[l]` the post-ReLU output of hidden layer `l`.
    activations: Vec<Array2<f64>>,
    probs: Array2<f64>,
}

impl Mlp {
    pub fn new(spec: ModelSpec) -> Self {
        let layout = spec.layout();
        Self { spec, layout }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Draws initial parameters uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; self.spec.n_params()];
        for &(w_off, b_off, fan_in, fan_out) in &self.layout {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut values[w_off..b_off + fan_out] {
                *v = rng.random_range(-bound..=bound);
            }
        }
        ParamVector(values)
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.spec.n_params() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, model {:?} needs {}",
                params.len(),
                self.spec.layer_sizes(),
                self.spec.n_params()
            )));
        }
        Ok(())
    }

    fn check_inputs(&self, inputs: &ArrayView2<'_, f64>) -> Result<()> {
        if inputs.ncols() != self.spec.input_dim() {
            return Err(Error::Shape(format!(
                "inputs have {} features, model expects {}",
                inputs.ncols(),
                self.spec.input_dim()
            )));
        }
        Ok(())
    }

    fn check_labels(&self, labels: &[usize], rows: usize) -> Result<()> {
        if labels.len() != rows {
            return Err(Error::Shape(format!(
                "{} labels for {} input rows",
                labels.len(),
                rows
            )));
        }
        let c = self.spec.n_classes();
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Validation(format!("label {bad} outside [0, {c})")));
        }
        Ok(())
    }

    fn weights<'a>(
        &self,
        params: &'a [f64],
        layer: usize,
    ) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
        let (w_off, b_off, fan_in, fan_out) = self.layout[layer];
        let w = ArrayView2::from_shape((fan_in, fan_out), &params[w_off..b_off])
            .expect("layout matches spec");
        let b = ArrayView1::from(&params[b_off..b_off + fan_out]);
        (w, b)
    }

    fn weights_mut<'a>(
        &self,
        params: &'a mut [f64],
        layer: usize,
    ) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
        let (w_off, b_off, fan_in, fan_out) = self.layout[layer];
        let (w, b) = params[w_off..b_off + fan_out].split_at_mut(b_off - w_off);
        (
            ArrayViewMut2::from_shape((fan_in, fan_out), w).expect("layout matches spec"),
            ArrayViewMut1::from(b),
        )
    }

    fn forward_trace(&self, params: &[f64], inputs: ArrayView2<'_, f64>) -> ForwardTrace {
        let n_layers = self.spec.n_layers();
        let mut activations = Vec::with_capacity(n_layers);
        activations.push(inputs.to_owned());
        let mut logits = Array2::zeros((0, 0));
        for layer in 0..n_layers {
            let (w, b) = self.weights(params, layer);
            let input = activations.last().expect("input pushed");
            let mut z = Array2::zeros((input.nrows(), w.ncols()));
            general_mat_mul(1.0, input, &w, 0.0, &mut z);
            z += &b;
            if layer + 1 < n_layers {
                z.mapv_inplace(|v| v.max(0.0));
                activations.push(z);
            } else {
                logits = z;
            }
        }
        softmax_rows_inplace(&mut logits);
        ForwardTrace {
            activations,
            probs: logits,
        }
    }

    /// Class-probability rows for a batch of feature rows.
    pub fn forward(
        &self,
        params: &ParamVector,
        inputs: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>> {
        self.check_params(params)?;
        self.check_inputs(&inputs)?;
        Ok(self.forward_trace(params, inputs).probs)
    }

    /// Cross-entropy `-ln p[label]` of every sample, not averaged.
    pub fn per_sample_loss(
        &self,
        params: &ParamVector,
        inputs: ArrayView2<'_, f64>,
        labels: &[usize],
    ) -> Result<Vec<f64>> {
        self.check_params(params)?;
        self.check_inputs(&inputs)?;
        self.check_labels(labels, inputs.nrows())?;
        let mut losses = Vec::with_capacity(labels.len());
        for start in (0..inputs.nrows()).step_by(INFERENCE_CHUNK) {
            let end = (start + INFERENCE_CHUNK).min(inputs.nrows());
            let probs = self
                .forward_trace(params, inputs.slice(s![start..end, ..]))
                .probs;
            losses.extend(
                probs
                    .outer_iter()
                    .zip(&labels[start..end])
                    .map(|(row, &y)| clamped_nll(row[y])),
            );
        }
        Ok(losses)
    }

    /// Mean cross-entropy over the batch and its gradient (without weight decay).
    pub fn loss_and_gradient(
        &self,
        params: &ParamVector,
        inputs: ArrayView2<'_, f64>,
        labels: &[usize],
    ) -> Result<(f64, ParamVector)> {
        self.check_params(params)?;
        self.check_inputs(&inputs)?;
        self.check_labels(labels, inputs.nrows())?;
        if labels.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        let mut grad = ParamVector::zeros(params.len());
        let loss = self.backprop(params, inputs, labels, grad.as_mut_slice());
        Ok((loss, grad))
    }

    /// Writes the mean-loss gradient into `grad` and returns the mean clamped loss.
    fn backprop(
        &self,
        params: &[f64],
        inputs: ArrayView2<'_, f64>,
        labels: &[usize],
        grad: &mut [f64],
    ) -> f64 {
        let batch = labels.len() as f64;
        let trace = self.forward_trace(params, inputs);
        let loss = trace
            .probs
            .outer_iter()
            .zip(labels)
            .map(|(row, &y)| clamped_nll(row[y]))
            .sum::<f64>()
            / batch;

        let mut delta = trace.probs;
        for (mut row, &y) in delta.outer_iter_mut().zip(labels) {
            row[y] -= 1.0;
        }
        delta.mapv_inplace(|v| v / batch);

        for layer in (0..self.spec.n_layers()).rev() {
            let input = &trace.activations[layer];
            {
                let (mut gw, mut gb) = self.weights_mut(grad, layer);
                general_mat_mul(1.0, &input.t(), &delta, 0.0, &mut gw);
                gb.assign(&delta.sum_axis(Axis(0)));
            }
            if layer > 0 {
                let (w, _) = self.weights(params, layer);
                let mut upstream = Array2::zeros((delta.nrows(), w.nrows()));
                general_mat_mul(1.0, &delta, &w.t(), 0.0, &mut upstream);
                // ReLU derivative; the stored activation is positive exactly where z was.
                ndarray::Zip::from(&mut upstream)
                    .and(input)
                    .for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    });
                delta = upstream;
            }
        }
        loss
    }

    /// Runs `cfg.epochs` of minibatch SGD starting from `params` and returns the result.
    ///
    /// Batches are drawn from one shuffle per epoch of a generator seeded with
    /// `cfg.seed`; the last batch of an epoch may be partial. The update is
    /// `w <- w - lr * (grad + weight_decay * w)`.
    pub fn train_local(
        &self,
        params: &ParamVector,
        dataset: &Dataset,
        cfg: &TrainConfig,
    ) -> Result<ParamVector> {
        self.check_params(params)?;
        cfg.validate()?;
        if dataset.is_empty() {
            return Err(Error::Validation("cannot train on an empty dataset".into()));
        }
        self.check_inputs(&dataset.features())?;
        self.check_labels(dataset.labels(), dataset.len())?;

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut current = params.clone();
        let mut grad = vec![0.0; params.len()];
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut batch_labels = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let batch = dataset.features().select(Axis(0), chunk);
                batch_labels.clear();
                batch_labels.extend(chunk.iter().map(|&i| dataset.labels()[i]));
                self.backprop(current.as_slice(), batch.view(), &batch_labels, &mut grad);
                let lr = cfg.learning_rate;
                let wd = cfg.weight_decay;
                for (w, g) in current.as_mut_slice().iter_mut().zip(&grad) {
                    *w -= lr * (g + wd * *w);
                }
            }
        }
        Ok(current)
    }

    /// Predicted class per row; ties resolve to the lowest class index.
    pub fn predict(&self, params: &ParamVector, inputs: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        self.check_params(params)?;
        self.check_inputs(&inputs)?;
        let mut out = Vec::with_capacity(inputs.nrows());
        for start in (0..inputs.nrows()).step_by(INFERENCE_CHUNK) {
            let end = (start + INFERENCE_CHUNK).min(inputs.nrows());
            let probs = self
                .forward_trace(params, inputs.slice(s![start..end, ..]))
                .probs;
            out.extend(probs.outer_iter().map(|row| argmax(row)));
        }
        Ok(out)
    }

    /// Fraction of samples whose argmax prediction equals the label.
    pub fn evaluate(&self, params: &ParamVector, test_set: &Dataset) -> Result<f64> {
        if test_set.is_empty() {
            return Err(Error::Validation(
                "cannot evaluate on an empty test set".into(),
            ));
        }
        let predictions = self.predict(params, test_set.features())?;
        let correct = predictions
            .iter()
            .zip(test_set.labels())
            .filter(|(p, y)| p == y)
            .count();
        Ok(correct as f64 / test_set.len() as f64)
    }
}

/// `-ln(clamp(p, PROB_EPS, 1 - PROB_EPS))`.
pub fn clamped_nll(p: f64) -> f64 {
    -p.clamp(PROB_EPS, 1.0 - PROB_EPS).ln()
}

fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

fn softmax_rows_inplace(logits: &mut Array2<f64>) {
    for mut row in logits.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Softmax of a single logit vector, max-shifted.
pub fn softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let mut m = logits.to_owned().insert_axis(Axis(0));
    softmax_rows_inplace(&mut m);
    m.remove_axis(Axis(0))
}
