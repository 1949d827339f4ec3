//! Surrogate-gradient BPTT training with Adam, and evaluation metrics.

mod bptt;
mod metrics;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bptt::{
    activity_regularizer, cross_entropy, grad_check, loss_and_gradients, loss_only, loss_total, surrogate_spike_grad,
    GradCheck, GradientSet, LossOptions, LossParts, GRAD_CHECK_FLOOR,
};
pub use metrics::{Confusion, Metrics};

use crate::encoding::SpikeRaster;
use crate::wavesense::{forward, readout_decision, Network, WaveSenseError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss or gradient at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("training set has no trial of class {0}")]
    MissingClass(usize),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Network(#[from] WaveSenseError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// A labelled raster. Label 1 is ictal.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub raster: SpikeRaster,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Fraction of each class used for training (4:1 split).
    pub train_fraction: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Spikes per neuron per timestep above which activity is penalised.
    pub reg_threshold_l: f64,
    pub reg_weight: f64,
    pub surrogate_slope: f64,
    /// Majority class is subsampled to at most this many times the minority.
    pub max_imbalance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            learning_rate: 0.0005,
            train_fraction: 0.8,
            batch_size: 16,
            seed: 0,
            reg_threshold_l: 1.0,
            reg_weight: 1.0,
            surrogate_slope: 10.0,
            max_imbalance: 3.0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |s: &str| Err(TrainError::InvalidConfig(s.into()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a non-negative number");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.reg_threshold_l >= 0.0) {
            return bad("reg_threshold_l must be non-negative");
        }
        if !(self.surrogate_slope > 0.0) {
            return bad("surrogate_slope must be positive");
        }
        if !(self.max_imbalance >= 1.0) {
            return bad("max_imbalance must be at least 1");
        }
        Ok(())
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            surrogate_slope: self.surrogate_slope,
            reg_threshold_l: self.reg_threshold_l,
            reg_weight: self.reg_weight,
        }
    }
}

/// Stratified deterministic split: per class, a seeded shuffle and the
/// first `round(n * fraction)` items go to training. Both index lists are
/// returned in ascending order.
pub fn split_train_test(labels: &[usize], train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let k = (idx.len() as f64 * train_fraction).round() as usize;
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Subsamples every class to at most `max_ratio` times the smallest class.
pub fn rebalance(indices: &[usize], labels: &[usize], max_ratio: f64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n_classes = indices.iter().map(|&i| labels[i] + 1).max().unwrap_or(0);
    let per_class: Vec<Vec<usize>> = (0..n_classes)
        .map(|c| indices.iter().copied().filter(|&i| labels[i] == c).collect())
        .collect();
    let Some(minority) = per_class.iter().map(Vec::len).filter(|&n| n > 0).min() else {
        return Vec::new();
    };
    let cap = (minority as f64 * max_ratio).floor() as usize;
    let mut out = Vec::new();
    for mut idx in per_class {
        if idx.len() > cap {
            idx.shuffle(&mut rng);
            idx.truncate(cap);
        }
        out.extend(idx);
    }
    out.sort_unstable();
    out
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(net: &Network, lr: f64) -> Self {
        let zeros = GradientSet::zeros_like(net).blocks;
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &GradientSet) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, w) in net.weight_slices_mut().into_iter().enumerate() {
            for (i, wi) in w.iter_mut().enumerate() {
                let g = grads.blocks[k][i];
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *wi -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
}

/// Writes the history as one JSON object per line.
pub fn write_history<W: Write>(history: &[EpochRecord], out: &mut W) -> std::io::Result<()> {
    for r in history {
        serde_json::to_writer(&mut *out, r)?;
        writeln!(out)?;
    }
    Ok(())
}

/// Float-model predictions for a set of samples.
pub fn predict(net: &Network, samples: &[&Sample]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| Ok(readout_decision(&forward(net, &s.raster)?)))
        .collect()
}

pub fn evaluate(net: &Network, samples: &[&Sample]) -> Result<Metrics> {
    let predicted = predict(net, samples)?;
    let actual: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Ok(Metrics::from_predictions(&predicted, &actual))
}

/// Trains on the training part of a stratified 4:1 split of `samples`
/// (see [`split_train_test`]) and reports test metrics after each epoch.
pub fn train(net: &Network, samples: &[Sample], config: &TrainConfig) -> Result<(Network, Vec<EpochRecord>)> {
    train_with(net, samples, config, |_| {})
}

/// [`train`] with a per-epoch callback, e.g. for progress logging.
pub fn train_with(
    net: &Network,
    samples: &[Sample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Network, Vec<EpochRecord>)> {
    config.check()?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    for c in 0..net.n_classes() {
        if !labels.contains(&c) {
            return Err(TrainError::MissingClass(c));
        }
    }
    let (train_idx, test_idx) = split_train_test(&labels, config.train_fraction, config.seed);
    let mut train_idx = rebalance(&train_idx, &labels, config.max_imbalance, config.seed);
    let test: Vec<&Sample> = test_idx.iter().map(|&i| &samples[i]).collect();
    let opts = config.loss_options();

    let mut net = net.clone();
    let mut adam = Adam::new(&net, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, batch) in train_idx.chunks(config.batch_size).enumerate() {
            let mut grads = GradientSet::zeros_like(&net);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &samples[i];
                let (parts, g) = loss_and_gradients(&net, &s.raster, s.label, &opts)?;
                if !parts.total.is_finite() || !g.is_finite() {
                    return Err(TrainError::NonFiniteLoss { epoch, batch: b });
                }
                loss_sum += parts.total;
                correct += (parts.prediction == s.label) as usize;
                grads.add_scaled(&g, scale);
            }
            adam.step(&mut net, &grads);
        }
        let m = if test.is_empty() {
            Metrics::default()
        } else {
            evaluate(&net, &test)?
        };
        let record = EpochRecord {
            epoch,
            loss: loss_sum / train_idx.len().max(1) as f64,
            train_accuracy: correct as f64 / train_idx.len().max(1) as f64,
            accuracy: m.accuracy,
            sensitivity: m.sensitivity,
            specificity: m.specificity,
            f1: m.f1,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train acc {:.3} test acc {:?}",
            record.loss,
            record.train_accuracy,
            record.accuracy
        );
        on_epoch(&record);
        history.push(record);
    }
    Ok((net, history))
}
