//! Supervised training: backpropagation with mini-batch SGD and momentum.
//!
//! Used to produce the original classifier (cross-entropy on labels) and to
//! retrain compressed networks during repair (mean Euclidean-norm loss on
//! target vectors). Training is deterministic given the seed: initialization
//! and shuffling draw from dedicated seeded streams and gradients accumulate
//! in fixed order.

use ndarray::{Array1, Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{Layer, Network};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax cross-entropy over integer class labels.
    CrossEntropy,
    /// Mean (unsquared) Euclidean norm of the residual, `1/N * sum ||y - t||`.
    MeanSquaredError,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            loss: LossKind::CrossEntropy,
            seed: 0,
        }
    }
}

/// Per-epoch training progress, emitted as line-delimited JSON by the CLI.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: Option<f64>,
}

/// Batch targets for the gradient path.
pub enum BatchTargets<'a> {
    Labels(&'a [usize]),
    /// One target row per sample.
    Vectors(&'a Array2<f64>),
}

/// Gradient of the batch loss for one fully connected layer.
#[derive(Clone, Debug)]
pub struct FcGrad {
    /// Index of the layer within the network.
    pub layer: usize,
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Initialize a multilayer perceptron with the given widths. Every hidden
/// fully connected layer is followed by a ReLU; the output layer is linear so
/// logits can carry sign. Weights are uniform on `+-sqrt(6/(n_in+n_out))`,
/// biases zero.
pub fn init_mlp(widths: &[usize], seed: u64) -> Result<Network> {
    if widths.len() < 2 {
        return Err(Error::Validation("need at least input and output widths".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    for (i, pair) in widths.windows(2).enumerate() {
        let (n_in, n_out) = (pair[0], pair[1]);
        if n_in == 0 || n_out == 0 {
            return Err(Error::Validation("zero layer width".into()));
        }
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let mut flat = Vec::with_capacity(n_out * n_in);
        for _ in 0..n_out * n_in {
            flat.push(rng.random_range(-limit..limit));
        }
        let weight = Array2::from_shape_vec((n_out, n_in), flat)
            .map_err(|e| Error::Validation(e.to_string()))?;
        layers.push(Layer::fully_connected(weight, Array1::zeros(n_out))?);
        if i + 1 < widths.len() - 1 {
            layers.push(Layer::relu(n_out)?);
        }
    }
    Network::new(layers)
}

/// Mean Euclidean norm of prediction residuals (the retraining loss).
pub fn mse_loss(preds: &[Array1<f64>], targets: &[Array1<f64>]) -> Result<f64> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::Validation(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        if p.len() != t.len() {
            return Err(Error::Validation("prediction/target length mismatch".into()));
        }
        total += (p - t).mapv(|v| v * v).sum().sqrt();
    }
    Ok(total / preds.len() as f64)
}

/// Fraction of samples where the argmax output matches the label. Ties break
/// toward the lowest index.
pub fn evaluate_accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    let labels = data
        .labels()
        .ok_or_else(|| Error::Validation("accuracy needs a labeled dataset".into()))?;
    let n = data.len();
    let mut hits = 0usize;
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(512) {
        let x = data.input_matrix(chunk);
        let out = net.forward_batch(&x)?;
        for (row, &i) in chunk.iter().enumerate() {
            if argmax(out.row(row)) == labels[i] {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / n as f64)
}

pub(crate) fn argmax(values: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Loss of a batch without gradients.
pub fn batch_loss(
    net: &Network,
    x: &Array2<f64>,
    targets: &BatchTargets,
    loss: LossKind,
) -> Result<f64> {
    let out = net.forward_batch(x)?;
    let (value, _) = loss_head(&out, targets, loss)?;
    Ok(value)
}

/// Loss of a batch together with the gradient for every fully connected layer.
pub fn batch_loss_and_gradients(
    net: &Network,
    x: &Array2<f64>,
    targets: &BatchTargets,
    loss: LossKind,
) -> Result<(f64, Vec<FcGrad>)> {
    if x.ncols() != net.input_dim() {
        return Err(Error::Dimension {
            layer: 0,
            expected: net.input_dim(),
            got: x.ncols(),
        });
    }
    let caches = forward_cached(net.layers(), x);
    let out = caches.last().expect("at least one layer");
    let (value, d_out) = loss_head(out, targets, loss)?;
    let grads = backward(net.layers(), &caches, x, d_out);
    Ok((value, grads))
}

/// Forward pass keeping each layer output; index `i` holds the output of
/// layer `i`.
fn forward_cached(layers: &[Layer], x: &Array2<f64>) -> Vec<Array2<f64>> {
    let mut outs = Vec::with_capacity(layers.len());
    let mut cur = layers[0].apply_batch(x);
    outs.push(cur.clone());
    for layer in &layers[1..] {
        cur = layer.apply_batch(&cur);
        outs.push(cur.clone());
    }
    outs
}

fn loss_head(
    out: &Array2<f64>,
    targets: &BatchTargets,
    loss: LossKind,
) -> Result<(f64, Array2<f64>)> {
    let batch = out.nrows() as f64;
    match (loss, targets) {
        (LossKind::CrossEntropy, BatchTargets::Labels(labels)) => {
            if labels.len() != out.nrows() {
                return Err(Error::Validation("label count != batch size".into()));
            }
            let mut d = Array2::zeros(out.raw_dim());
            let mut total = 0.0;
            for (i, row) in out.rows().into_iter().enumerate() {
                let label = labels[i];
                if label >= row.len() {
                    return Err(Error::Validation(format!(
                        "label {label} out of range for {} outputs",
                        row.len()
                    )));
                }
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for &v in row.iter() {
                    sum += (v - max).exp();
                }
                total += -(row[label] - max - sum.ln());
                for (j, &v) in row.iter().enumerate() {
                    let p = (v - max).exp() / sum;
                    d[(i, j)] = (p - if j == label { 1.0 } else { 0.0 }) / batch;
                }
            }
            Ok((total / batch, d))
        }
        (LossKind::MeanSquaredError, BatchTargets::Vectors(t)) => {
            if t.raw_dim() != out.raw_dim() {
                return Err(Error::Validation("target shape != output shape".into()));
            }
            let residual = out - *t;
            let mut d = Array2::zeros(out.raw_dim());
            let mut total = 0.0;
            for (i, row) in residual.rows().into_iter().enumerate() {
                let norm = row.dot(&row).sqrt();
                total += norm;
                if norm > 0.0 {
                    // Subgradient 0 at zero residual keeps the unsquared norm safe.
                    for (j, &v) in row.iter().enumerate() {
                        d[(i, j)] = v / (norm * batch);
                    }
                }
            }
            Ok((total / batch, d))
        }
        (LossKind::CrossEntropy, BatchTargets::Vectors(_)) => {
            Err(Error::Validation("cross-entropy needs labels, got target vectors".into()))
        }
        (LossKind::MeanSquaredError, BatchTargets::Labels(_)) => {
            Err(Error::Validation("mean squared error needs target vectors, got labels".into()))
        }
    }
}

fn backward(
    layers: &[Layer],
    caches: &[Array2<f64>],
    input: &Array2<f64>,
    mut delta: Array2<f64>,
) -> Vec<FcGrad> {
    let mut grads = Vec::new();
    for (idx, layer) in layers.iter().enumerate().rev() {
        let layer_input = if idx == 0 { input } else { &caches[idx - 1] };
        match layer {
            Layer::FullyConnected { weight, .. } => {
                let g_w = delta.t().dot(layer_input);
                let g_b = delta.sum_axis(Axis(0));
                delta = delta.dot(weight);
                grads.push(FcGrad {
                    layer: idx,
                    weight: g_w,
                    bias: g_b,
                });
            }
            Layer::Relu { .. } => {
                delta.zip_mut_with(layer_input, |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
        }
    }
    grads.reverse();
    grads
}

/// Train a copy of `net` on `data`. ReLU layers carry no parameters and are
/// untouched.
pub fn train(net: &Network, data: &Dataset, cfg: &TrainConfig) -> Result<Network> {
    train_with_progress(net, data, cfg, |_| {})
}

pub fn train_with_progress(
    net: &Network,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Network> {
    validate_config(net, data, cfg)?;
    let mut layers = net.layers().to_vec();
    let mut velocity: Vec<Option<(Array2<f64>, Array1<f64>)>> = layers
        .iter()
        .map(|l| match l {
            Layer::FullyConnected { weight, bias } => {
                Some((Array2::zeros(weight.raw_dim()), Array1::zeros(bias.raw_dim())))
            }
            Layer::Relu { .. } => None,
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = data.input_matrix(chunk);
            let (loss, grads) = match cfg.loss {
                LossKind::CrossEntropy => {
                    let labels = data.labels().expect("validated");
                    let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                    let caches = forward_cached(&layers, &x);
                    let (v, d) =
                        loss_head(caches.last().unwrap(), &BatchTargets::Labels(&batch_labels), cfg.loss)?;
                    (v, backward(&layers, &caches, &x, d))
                }
                LossKind::MeanSquaredError => {
                    let targets = data.targets().expect("validated");
                    let dim = targets[0].len();
                    let mut t = Array2::zeros((chunk.len(), dim));
                    for (row, &i) in chunk.iter().enumerate() {
                        t.row_mut(row).assign(&targets[i]);
                    }
                    let caches = forward_cached(&layers, &x);
                    let (v, d) =
                        loss_head(caches.last().unwrap(), &BatchTargets::Vectors(&t), cfg.loss)?;
                    (v, backward(&layers, &caches, &x, d))
                }
            };
            if !loss.is_finite() {
                return Err(Error::Training {
                    iteration: step,
                    layer: None,
                    detail: format!("non-finite loss {loss}"),
                });
            }
            for g in &grads {
                if g.weight.iter().any(|v| !v.is_finite()) || g.bias.iter().any(|v| !v.is_finite())
                {
                    return Err(Error::Training {
                        iteration: step,
                        layer: Some(g.layer),
                        detail: "non-finite gradient".into(),
                    });
                }
                let (vw, vb) = velocity[g.layer].as_mut().expect("fc layer has velocity");
                if let Layer::FullyConnected { weight, bias } = &mut layers[g.layer] {
                    vw.zip_mut_with(&g.weight, |v, &gr| {
                        *v = cfg.momentum * *v - cfg.learning_rate * gr
                    });
                    vb.zip_mut_with(&g.bias, |v, &gr| {
                        *v = cfg.momentum * *v - cfg.learning_rate * gr
                    });
                    weight.zip_mut_with(vw, |w, &v| *w += v);
                    bias.zip_mut_with(vb, |b, &v| *b += v);
                }
            }
            loss_sum += loss * chunk.len() as f64;
            step += 1;
        }
        let trained = Network::new(layers.clone())?;
        let accuracy = if data.labels().is_some() {
            Some(evaluate_accuracy(&trained, data)?)
        } else {
            None
        };
        on_epoch(&EpochRecord {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy,
        });
    }
    Network::new(layers)
}

fn validate_config(net: &Network, data: &Dataset, cfg: &TrainConfig) -> Result<()> {
    if cfg.batch_size == 0 || cfg.batch_size > data.len() {
        return Err(Error::Validation(format!(
            "batch size {} outside 1..={}",
            cfg.batch_size,
            data.len()
        )));
    }
    if !cfg.learning_rate.is_finite() || cfg.learning_rate < 0.0 {
        return Err(Error::Validation("learning rate must be finite and >= 0".into()));
    }
    if !(0.0..1.0).contains(&cfg.momentum) {
        return Err(Error::Validation("momentum must lie in [0, 1)".into()));
    }
    if data.input_dim() != net.input_dim() {
        return Err(Error::Validation(format!(
            "dataset inputs have dim {}, network expects {}",
            data.input_dim(),
            net.input_dim()
        )));
    }
    match cfg.loss {
        LossKind::CrossEntropy => {
            let labels = data
                .labels()
                .ok_or_else(|| Error::Validation("cross-entropy requires labels".into()))?;
            if let Some(&bad) = labels.iter().find(|&&l| l >= net.output_dim()) {
                return Err(Error::Validation(format!(
                    "label {bad} out of range for {} outputs",
                    net.output_dim()
                )));
            }
        }
        LossKind::MeanSquaredError => {
            let targets = data
                .targets()
                .ok_or_else(|| Error::Validation("mean squared error requires targets".into()))?;
            if targets.iter().any(|t| t.len() != net.output_dim()) {
                return Err(Error::Validation("target dim != network output dim".into()));
            }
        }
    }
    Ok(())
}
