//! Labelled surrogate EEG for desk-scale experiments.
//!
//! Background is band-limited 1/f noise. Inside each annotated seizure a
//! rhythmic 3-12 Hz discharge (fundamental plus a weaker harmonic, slowly
//! drifting downwards in frequency) is added on every channel, so both the
//! amplitude and the dominant frequency rise during seizures.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{Recording, SeizureAnnotation};

/// Bipolar longitudinal montage of the CHB-MIT recordings.
pub(crate) const CHB_MIT_MONTAGE: [&str; 23] = [
    "FP1-F7", "F7-T7", "T7-P7", "P7-O1", "FP1-F3", "F3-C3", "C3-P3", "P3-O1", "FP2-F4", "F4-C4", "C4-P4", "P4-O2",
    "FP2-F8", "F8-T8", "T8-P8", "P8-O2", "FZ-CZ", "CZ-PZ", "P7-T7", "T7-FT9", "FT9-FT10", "FT10-T8", "T8-P8-1",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub duration_s: f64,
    pub n_channels: usize,
    pub sample_rate: f64,
    pub seizures: Vec<SeizureAnnotation>,
    /// RMS of the background noise, microvolts.
    pub background_rms_uv: f64,
    /// Peak amplitude of the ictal rhythm relative to the background RMS.
    pub ictal_amplitude_ratio: f64,
    /// Amplitude of 50 Hz mains interference, microvolts.
    pub line_noise_uv: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            duration_s: 60.0,
            n_channels: 2,
            sample_rate: 256.0,
            seizures: Vec::new(),
            background_rms_uv: 20.0,
            ictal_amplitude_ratio: 3.0,
            line_noise_uv: 5.0,
        }
    }
}

fn channel_labels(n: usize) -> Vec<String> {
    if n == CHB_MIT_MONTAGE.len() {
        return CHB_MIT_MONTAGE.iter().map(|s| s.to_string()).collect();
    }
    let mut order = vec!["C3-P3", "C4-P4"];
    order.extend(CHB_MIT_MONTAGE.iter().filter(|l| !matches!(**l, "C3-P3" | "C4-P4")));
    (0..n)
        .map(|i| order.get(i).map_or_else(|| format!("CH{i}"), |s| s.to_string()))
        .collect()
}

/// Gaussian noise with a 1/f power spectrum between 0.5 Hz and
/// min(100 Hz, Nyquist), scaled to `rms`.
fn pink_noise(rng: &mut ChaCha8Rng, n: usize, fs: f64, rms: f64) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(StandardNormal.sample(rng), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let f_hi = 100.0f64.min(fs / 2.0);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        let f = bin as f64 * fs / n as f64;
        *c *= if (0.5..=f_hi).contains(&f) { 1.0 / f.sqrt() } else { 0.0 };
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let power = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let gain = if power > 0.0 { rms / power.sqrt() } else { 0.0 };
    x.iter_mut().for_each(|v| *v = (*v - mean) * gain);
    x
}

/// Deterministic synthetic recording; annotations equal `params.seizures`.
pub fn synth_eeg(params: &SynthParams, seed: u64) -> Recording {
    let fs = params.sample_rate;
    let n = (params.duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut data: Vec<Vec<f64>> = (0..params.n_channels)
        .map(|_| pink_noise(&mut rng, n, fs, params.background_rms_uv))
        .collect();

    let line_phase: Vec<f64> = (0..params.n_channels).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
    for (series, phase) in data.iter_mut().zip(&line_phase) {
        for (i, v) in series.iter_mut().enumerate() {
            *v += params.line_noise_uv * (2.0 * PI * 50.0 * i as f64 / fs + phase).sin();
        }
    }

    let amp = params.ictal_amplitude_ratio * params.background_rms_uv;
    let taper = 0.1;
    for sz in &params.seizures {
        let f_start: f64 = rng.random_range(5.0..12.0);
        let f_end = (f_start * rng.random_range(0.6..0.9)).max(3.0);
        let mod_rate: f64 = rng.random_range(0.1..0.5);
        let first = ((sz.start_s * fs).ceil() as usize).min(n);
        let last = ((sz.end_s * fs).ceil() as usize).min(n);
        let len = sz.end_s - sz.start_s;
        for series in data.iter_mut() {
            let phase0: f64 = rng.random::<f64>() * 2.0 * PI;
            let mod_phase: f64 = rng.random::<f64>() * 2.0 * PI;
            let mut phase = phase0;
            for (i, v) in series.iter_mut().enumerate().take(last).skip(first) {
                let t = i as f64 / fs - sz.start_s;
                let progress = (t / len).clamp(0.0, 1.0);
                let f = f_start + (f_end - f_start) * progress;
                phase += 2.0 * PI * f / fs;
                let edge = (t / taper).min((len - t) / taper).clamp(0.0, 1.0);
                let envelope = edge * (1.0 + 0.2 * (2.0 * PI * mod_rate * t + mod_phase).sin());
                *v += amp * envelope * (phase.sin() + 0.4 * (2.0 * phase + 0.5).sin());
            }
        }
    }

    Recording {
        channel_labels: channel_labels(params.n_channels),
        sample_rate: fs,
        data,
        annotations: params.seizures.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigproc::{segment_trials, TrialLabel};

    /// Mean periodogram power in [lo, hi] Hz by a direct DFT.
    fn band_power(x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
        let n = x.len();
        let mut total = 0.0;
        let mut bins = 0;
        for k in 1..n / 2 {
            let f = k as f64 * fs / n as f64;
            if f < lo || f > hi {
                continue;
            }
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &v) in x.iter().enumerate() {
                let w = 2.0 * PI * (k * i) as f64 / n as f64;
                re += v * w.cos();
                im -= v * w.sin();
            }
            total += (re * re + im * im) / n as f64;
            bins += 1;
        }
        total / bins as f64
    }

    fn params() -> SynthParams {
        SynthParams {
            duration_s: 40.0,
            seizures: vec![SeizureAnnotation {
                start_s: 20.0,
                end_s: 35.0,
            }],
            ..SynthParams::default()
        }
    }

    #[test]
    fn same_seed_same_recording() {
        assert_eq!(synth_eeg(&params(), 3), synth_eeg(&params(), 3));
        assert_ne!(synth_eeg(&params(), 3), synth_eeg(&params(), 4));
    }

    #[test]
    fn no_seizures_means_all_interictal() {
        let rec = synth_eeg(&SynthParams::default(), 1);
        let trials = segment_trials(&rec, 5.0, 0.5);
        assert_eq!(trials.len(), 12);
        assert!(trials.iter().all(|t| t.label == TrialLabel::Interictal));
    }

    #[test]
    fn ictal_band_power_at_least_doubles() {
        let rec = synth_eeg(&params(), 11);
        let fs = rec.sample_rate;
        for ch in &rec.data {
            let bg = band_power(&ch[(5.0 * fs) as usize..(15.0 * fs) as usize], fs, 3.0, 12.0);
            let ictal = band_power(&ch[(22.0 * fs) as usize..(32.0 * fs) as usize], fs, 3.0, 12.0);
            // RMS ratio >= 2 means power ratio >= 4
            assert!(ictal / bg >= 4.0, "power ratio {}", ictal / bg);
        }
    }

    #[test]
    fn labels_follow_annotations() {
        let rec = synth_eeg(&params(), 2);
        let labels: Vec<_> = segment_trials(&rec, 5.0, 0.5).iter().map(|t| t.label).collect();
        let want: Vec<_> = (0..8)
            .map(|k| {
                if (4..7).contains(&k) {
                    TrialLabel::Ictal
                } else {
                    TrialLabel::Interictal
                }
            })
            .collect();
        assert_eq!(labels, want);
    }

    #[test]
    fn default_montage_labels() {
        assert_eq!(channel_labels(2), vec!["C3-P3", "C4-P4"]);
        assert_eq!(channel_labels(23)[6], "C3-P3");
        assert_eq!(channel_labels(25)[24], "CH24");
    }
}
