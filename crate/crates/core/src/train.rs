//! A multinomial linear classifier trained by mini-batch gradient descent,
//! either with plain cross-entropy or with forward loss correction
//! `-ln((T^T f(x))[noisy label])`.

use rand::seq::SliceRandom;

use crate::dataset::LabeledDataset;
use crate::error::{HocError, Result};
use crate::matrix::TransitionMatrix;
use crate::seed::rng_for;

pub const DEFAULT_BATCH_SIZE: usize = 128;

/// `softmax(W^T x + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    d: usize,
    k: usize,
    /// Row-major `d x K`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(d: usize, k: usize) -> Self {
        LinearModel {
            d,
            k,
            weights: vec![0.0; d * k],
            bias: vec![0.0; k],
        }
    }

    pub fn from_parts(d: usize, k: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != d * k || bias.len() != k {
            return Err(HocError::arg("model parameter shapes do not match d x K"));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(HocError::arg("model parameters must be finite"));
        }
        Ok(LinearModel { d, k, weights, bias })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (i, xi) in x.iter().enumerate() {
            let xi = f64::from(*xi);
            let w = &self.weights[i * self.k..(i + 1) * self.k];
            z.iter_mut().zip(w).for_each(|(zc, wc)| *zc += xi * wc);
        }
        z
    }

    pub fn probabilities(&self, x: &[f32]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Arg-max class; ties go to the lower index.
    pub fn predict(&self, x: &[f32]) -> usize {
        let z = self.logits(x);
        let mut best = 0;
        for (c, v) in z.iter().enumerate() {
            if *v > z[best] {
                best = c;
            }
        }
        best
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub batch_size: usize,
}

impl TrainOptions {
    pub fn new(epochs: usize, lr: f64, seed: u64) -> Self {
        TrainOptions {
            epochs,
            lr,
            seed,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy against clean labels of the evaluation set, when given.
    pub clean_test_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: LinearModel,
    pub history: Vec<EpochMetrics>,
}

/// Loss of one example and its gradient with respect to the logits.
fn example_loss_grad(
    probs: &[f64],
    label: usize,
    correction: Option<&TransitionMatrix>,
    dz: &mut [f64],
) -> f64 {
    match correction {
        None => {
            dz.copy_from_slice(probs);
            dz[label] -= 1.0;
            -probs[label].max(f64::MIN_POSITIVE).ln()
        }
        Some(t) => {
            // q = T^T f; dL/dz_c = f_c - f_c T[c][y] / q_y
            let q: f64 = probs.iter().enumerate().map(|(c, f)| f * t.get(c, label)).sum();
            for (c, (g, f)) in dz.iter_mut().zip(probs).enumerate() {
                *g = f - (f * t.get(c, label)) / q;
            }
            -q.max(f64::MIN_POSITIVE).ln()
        }
    }
}

/// Mean loss over `indices` and its gradient `(dW, db)`.
pub fn batch_loss_and_grad(
    model: &LinearModel,
    dataset: &LabeledDataset,
    indices: &[usize],
    correction: Option<&TransitionMatrix>,
) -> (f64, Vec<f64>, Vec<f64>) {
    let (d, k) = (model.d, model.k);
    let mut gw = vec![0.0; d * k];
    let mut gb = vec![0.0; k];
    let mut dz = vec![0.0; k];
    let mut loss = 0.0;
    let labels = dataset.noisy_labels();
    for &n in indices {
        let x = dataset.feature(n);
        let probs = model.probabilities(x);
        loss += example_loss_grad(&probs, labels[n], correction, &mut dz);
        for (i, xi) in x.iter().enumerate() {
            let xi = f64::from(*xi);
            gw[i * k..(i + 1) * k]
                .iter_mut()
                .zip(&dz)
                .for_each(|(g, dzc)| *g += xi * dzc);
        }
        gb.iter_mut().zip(&dz).for_each(|(g, dzc)| *g += dzc);
    }
    let m = indices.len().max(1) as f64;
    gw.iter_mut().for_each(|g| *g /= m);
    gb.iter_mut().for_each(|g| *g /= m);
    (loss / m, gw, gb)
}

/// Mini-batch gradient descent from zero weights, reshuffled every epoch
/// from `opts.seed`. `correction = None` is plain cross-entropy.
pub fn fit(
    dataset: &LabeledDataset,
    correction: Option<&TransitionMatrix>,
    opts: &TrainOptions,
    eval: Option<&LabeledDataset>,
) -> Result<TrainOutcome> {
    if let Some(t) = correction {
        if t.k() != dataset.k() {
            return Err(HocError::arg(format!(
                "correction matrix has K = {}, dataset has {}",
                t.k(),
                dataset.k()
            )));
        }
    }
    if opts.batch_size == 0 || !(opts.lr > 0.0) {
        return Err(HocError::arg("batch size and learning rate must be positive"));
    }
    let mut model = LinearModel::zeros(dataset.d(), dataset.k());
    let mut order: Vec<usize> = (0..dataset.n()).collect();
    let mut history = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        let mut rng = rng_for(opts.seed, "train-shuffle", epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(opts.batch_size) {
            let (loss, gw, gb) = batch_loss_and_grad(&model, dataset, batch, correction);
            total += loss * batch.len() as f64;
            model.weights.iter_mut().zip(&gw).for_each(|(w, g)| *w -= opts.lr * g);
            model.bias.iter_mut().zip(&gb).for_each(|(b, g)| *b -= opts.lr * g);
        }
        let clean_test_accuracy = match eval {
            Some(e) => Some(accuracy(&model, e)?),
            None => None,
        };
        history.push(EpochMetrics {
            epoch: epoch + 1,
            train_loss: total / dataset.n().max(1) as f64,
            clean_test_accuracy,
        });
    }
    Ok(TrainOutcome { model, history })
}

/// Plain cross-entropy on the noisy labels.
pub fn train_ce(dataset: &LabeledDataset, epochs: usize, lr: f64, seed: u64) -> Result<LinearModel> {
    Ok(fit(dataset, None, &TrainOptions::new(epochs, lr, seed), None)?.model)
}

/// Forward-corrected training: the model's predictions are pushed through
/// `T^T` before the log-loss.
pub fn train_forward(
    dataset: &LabeledDataset,
    t: &TransitionMatrix,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<LinearModel> {
    Ok(fit(dataset, Some(t), &TrainOptions::new(epochs, lr, seed), None)?.model)
}

/// Fraction of points whose prediction matches the clean label.
pub fn accuracy(model: &LinearModel, dataset: &LabeledDataset) -> Result<f64> {
    let clean = dataset.require_clean_labels()?;
    if model.d != dataset.d() || model.k != dataset.k() {
        return Err(HocError::arg("model and dataset shapes differ"));
    }
    let hits = (0..dataset.n())
        .filter(|&n| model.predict(dataset.feature(n)) == clean[n])
        .count();
    Ok(hits as f64 / dataset.n().max(1) as f64)
}
