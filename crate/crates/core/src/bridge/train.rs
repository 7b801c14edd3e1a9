//! Linear-head fitting over frozen penultimate features.
//!
//! The head is trained engine-side with Adam (PyTorch semantics: L2 weight
//! decay added to the gradient of every parameter) and then installed into
//! the backend, so the feature extractor is never touched.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Bridge, LinearHead};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeding::{combine, rng_from};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadHyper {
    pub lr: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for HeadHyper {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 10,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport<T> {
    pub head: LinearHead<T>,
    /// Mean training cross-entropy after each epoch.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
}

/// Mean softmax cross-entropy of `head` over `(features, labels)`.
pub fn cross_entropy_loss(head: &LinearHead<f64>, features: &[Vec<f64>], labels: &[usize]) -> f64 {
    let total: f64 = features
        .iter()
        .zip(labels)
        .map(|(f, &y)| {
            let z = head.logits(f);
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - z[y]
        })
        .sum();
    total / features.len() as f64
}

/// Closed-form gradient of [`cross_entropy_loss`] w.r.t. the head weights
/// (row-major) and bias: `(p - onehot(y)) fᵀ` averaged over the batch.
pub fn cross_entropy_gradient(
    head: &LinearHead<f64>,
    features: &[Vec<f64>],
    labels: &[usize],
) -> (Vec<f64>, Vec<f64>) {
    let d = head.feature_dim;
    let mut gw = vec![0.0; head.weights.len()];
    let mut gb = vec![0.0; head.n_classes];
    let n = features.len() as f64;
    for (f, &y) in features.iter().zip(labels) {
        let p = head.probs(f);
        for c in 0..head.n_classes {
            let delta = (p[c] - if c == y { 1.0 } else { 0.0 }) / n;
            gb[c] += delta;
            for (g, x) in gw[c * d..(c + 1) * d].iter_mut().zip(f) {
                *g += delta * x;
            }
        }
    }
    (gw, gb)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], hp: &HeadHyper) {
        self.step += 1;
        let bc1 = 1.0 - hp.beta1.powi(self.step);
        let bc2 = 1.0 - hp.beta2.powi(self.step);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let g = g + hp.weight_decay * *p;
            self.m[i] = hp.beta1 * self.m[i] + (1.0 - hp.beta1) * g;
            self.v[i] = hp.beta2 * self.v[i] + (1.0 - hp.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            *p -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
    }
}

/// Fits a fresh linear head on precomputed features; deterministic in `hyper.seed`.
pub fn fit_linear_head<T: Scalar>(
    features: &[Vec<T>],
    labels: &[usize],
    n_classes: usize,
    hyper: &HeadHyper,
) -> Result<TrainReport<T>> {
    if features.is_empty() {
        return Err(Error::InvalidArgument("cannot train a head on an empty dataset".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::shape(Some("labels".into()), features.len(), labels.len()));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    if hyper.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let dim = features[0].len();
    let xs: Vec<Vec<f64>> = features
        .iter()
        .map(|f| f.iter().map(|v| v.to_f64_lossy()).collect())
        .collect();

    let mut rng = rng_from(combine(hyper.seed, &[0x4EAD]));
    let init = Normal::new(0.0, 0.01).expect("valid");
    let mut head = LinearHead::<f64>::zeros(n_classes, dim);
    for w in head.weights.iter_mut() {
        *w = init.sample(&mut rng);
    }

    let mut adam_w = Adam::new(head.weights.len());
    let mut adam_b = Adam::new(head.bias.len());
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hyper.batch_size) {
            let bx: Vec<Vec<f64>> = batch.iter().map(|&i| xs[i].clone()).collect();
            let by: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (gw, gb) = cross_entropy_gradient(&head, &bx, &by);
            adam_w.update(&mut head.weights, &gw, hyper);
            adam_b.update(&mut head.bias, &gb, hyper);
        }
        epoch_losses.push(cross_entropy_loss(&head, &xs, labels));
    }

    let hits = xs
        .iter()
        .zip(labels)
        .filter(|(f, &y)| super::PredictionBatch { probs: vec![head.logits(f)] }.argmax()[0] == y)
        .count();
    Ok(TrainReport {
        head: head.convert(),
        epoch_losses,
        train_accuracy: hits as f64 / xs.len() as f64,
    })
}

/// Extracts features for every sample of `ds` through the bridge, fits a
/// fresh head on them and installs it in the backend.
pub fn train_linear_head<T: Scalar>(
    bridge: &mut Bridge<T>,
    ds: &Dataset<T>,
    hyper: &HeadHyper,
) -> Result<TrainReport<T>> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("cannot train a head on an empty dataset".into()));
    }
    let images: Vec<&ImageTensor<T>> = ds.iter().map(|s| &s.image).collect();
    let labels: Vec<usize> = ds.iter().map(|s| s.class_label.index()).collect();
    let feats = bridge.get_features(&images)?;
    let report = fit_linear_head(&feats.features, &labels, bridge.n_classes(), hyper)?;
    bridge.set_head(&report.head)?;
    Ok(report)
}
