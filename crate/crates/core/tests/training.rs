//! End-to-end training behaviour on a toy task whose classes differ only in
//! which input channels fire.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seizure_snn::train::{split_train_test, train, Sample, TrainConfig};
use seizure_snn::hwmap::{extract_graph, quantize, simulate_quantized, ScaleMode};
use seizure_snn::wavesense::{build_network, forward, readout_decision};
use seizure_snn::{Network, SpikeRaster, WaveSenseConfig};

const STEPS: usize = 200;

fn toy_samples(n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let counts = (0..4)
                .map(|c| {
                    let busy = (c < 2) == (label == 1);
                    let p = if busy { 0.2 } else { 0.02 };
                    (0..STEPS).map(|_| (rng.random::<f64>() < p) as u32).collect()
                })
                .collect();
            Sample {
                raster: SpikeRaster::new(counts, 1.0 / 256.0),
                label,
            }
        })
        .collect()
}

fn toy_net(seed: u64) -> Network {
    let dt = 1.0 / 256.0;
    let cfg = WaveSenseConfig {
        n_blocks: 2,
        neurons_per_block: 8,
        readout_hidden: 8,
        dilation_taus: vec![2.0 * dt, 4.0 * dt, 8.0 * dt, 16.0 * dt],
        ..WaveSenseConfig::default()
    };
    build_network(&cfg, seed).unwrap()
}

fn config(epochs: usize, learning_rate: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        learning_rate,
        batch_size: 8,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn spike_counts(s: &Sample) -> Vec<f64> {
    (0..s.raster.n_channels())
        .map(|c| s.raster.counts[c].iter().map(|&k| k as f64).sum::<f64>() / STEPS as f64)
        .collect()
}

/// Logistic regression on per-channel spike rates, fitted by full-batch
/// gradient descent. Returns test accuracy.
fn logistic_oracle(samples: &[Sample], train_idx: &[usize], test_idx: &[usize]) -> f64 {
    let feats: Vec<Vec<f64>> = samples.iter().map(spike_counts).collect();
    let d = feats[0].len();
    let mut w = vec![0.0; d + 1];
    for _ in 0..2000 {
        let mut g = vec![0.0; d + 1];
        for &i in train_idx {
            let z = w[d] + (0..d).map(|j| w[j] * feats[i][j]).sum::<f64>();
            let err = 1.0 / (1.0 + (-z).exp()) - samples[i].label as f64;
            for j in 0..d {
                g[j] += err * feats[i][j];
            }
            g[d] += err;
        }
        for j in 0..=d {
            w[j] -= 5.0 * g[j] / train_idx.len() as f64;
        }
    }
    let correct = test_idx
        .iter()
        .filter(|&&i| {
            let z = w[d] + (0..d).map(|j| w[j] * feats[i][j]).sum::<f64>();
            ((z > 0.0) as usize) == samples[i].label
        })
        .count();
    correct as f64 / test_idx.len() as f64
}

#[test]
fn separable_toy_reaches_full_accuracy() {
    let samples = toy_samples(60, 1);
    let cfg = config(50, 5e-3);
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let (tr, te) = split_train_test(&labels, cfg.train_fraction, cfg.seed);
    assert_eq!(
        logistic_oracle(&samples, &tr, &te),
        1.0,
        "toy must be linearly separable"
    );

    let (net, history) = train(&toy_net(2), &samples, &cfg).unwrap();
    let first = history.iter().position(|r| r.accuracy == Some(1.0));
    assert!(
        first.is_some(),
        "{:?}",
        history.iter().map(|r| r.accuracy).collect::<Vec<_>>()
    );

    // the lowered network decides exactly like the float one on every trial
    let q = quantize(&extract_graph(&net), ScaleMode::PerPopulation).0;
    for s in &samples {
        let float = readout_decision(&forward(&net, &s.raster).unwrap());
        let fixed = readout_decision(&simulate_quantized(&q, &s.raster).unwrap().0);
        assert_eq!(float, fixed);
    }
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let net = toy_net(3);
    let (after, history) = train(&net, &toy_samples(20, 4), &config(1, 0.0)).unwrap();
    assert_eq!(history.len(), 1);
    assert_eq!(after, net);
}

#[test]
fn training_is_seed_deterministic() {
    let samples = toy_samples(24, 5);
    let a = train(&toy_net(6), &samples, &config(2, 5e-3)).unwrap();
    let b = train(&toy_net(6), &samples, &config(2, 5e-3)).unwrap();
    assert_eq!(a.0.to_json().unwrap(), b.0.to_json().unwrap());
    assert_eq!(a.1, b.1);
    let c = train(
        &toy_net(6),
        &samples,
        &TrainConfig {
            seed: 12,
            ..config(2, 5e-3)
        },
    )
    .unwrap();
    assert_ne!(a.0, c.0);
}

#[test]
fn loss_falls_over_ten_epochs() {
    let (_, history) = train(&toy_net(7), &toy_samples(40, 8), &config(10, 5e-3)).unwrap();
    assert!(history[9].loss < history[0].loss, "{history:?}");
}
