use std::f64::consts::PI;

use super::{Recording, Result, SigprocError};

/// Zero crossings of the interpolation kernel on each side.
const KERNEL_ZEROS: f64 = 16.0;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn blackman(u: f64) -> f64 {
    // u in [-1, 1]
    0.42 + 0.5 * (PI * u).cos() + 0.08 * (2.0 * PI * u).cos()
}

/// Band-limited resampling with a windowed-sinc kernel. When downsampling,
/// the kernel cutoff drops to the target Nyquist so the output is
/// anti-aliased. Offline (non-causal) by construction.
pub fn resample(recording: &Recording, target_hz: f64) -> Result<Recording> {
    if !(target_hz > 0.0 && target_hz.is_finite()) {
        return Err(SigprocError::InvalidTarget(target_hz));
    }
    let source_hz = recording.sample_rate;
    if (target_hz - source_hz).abs() < 1e-12 {
        return Ok(recording.clone());
    }
    let ratio = target_hz / source_hz;
    let n_in = recording.n_samples();
    let n_out = (n_in as f64 * ratio).round() as usize;
    // cutoff as a fraction of the source Nyquist
    let cutoff = ratio.min(1.0) * 0.95;
    let half = (KERNEL_ZEROS / cutoff).ceil();

    let data = recording
        .data
        .iter()
        .map(|x| {
            (0..n_out)
                .map(|n| {
                    let pos = n as f64 / ratio;
                    let lo = ((pos - half).ceil().max(0.0)) as usize;
                    let hi = ((pos + half).floor() as usize).min(n_in.saturating_sub(1));
                    let (mut acc, mut norm) = (0.0, 0.0);
                    for (k, &xk) in x.iter().enumerate().take(hi + 1).skip(lo) {
                        let d = pos - k as f64;
                        let w = cutoff * sinc(cutoff * d) * blackman(d / half);
                        acc += w * xk;
                        norm += w;
                    }
                    if norm.abs() > 1e-12 {
                        acc / norm
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    Recording::new(
        recording.channel_labels.clone(),
        target_hz,
        data,
        recording.annotations.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, fs: f64, seconds: f64) -> Vec<f64> {
        (0..(fs * seconds) as usize)
            .map(|i| (2.0 * PI * freq * i as f64 / fs).sin())
            .collect()
    }

    #[test]
    fn halving_rate_halves_length() {
        let rec = Recording::new(vec!["a".into()], 512.0, vec![tone(5.0, 512.0, 4.0)], vec![]).unwrap();
        let out = resample(&rec, 256.0).unwrap();
        assert!((out.n_samples() as i64 - 1024).abs() <= 1);
        assert!((out.duration_s() - rec.duration_s()).abs() <= 1.0 / 256.0);
    }

    #[test]
    fn same_rate_is_identity() {
        let rec = Recording::new(vec!["a".into()], 256.0, vec![tone(5.0, 256.0, 1.0)], vec![]).unwrap();
        assert_eq!(resample(&rec, 256.0).unwrap(), rec);
    }

    #[test]
    fn downsampled_sine_matches_analytic_samples() {
        let rec = Recording::new(vec!["a".into()], 512.0, vec![tone(5.0, 512.0, 4.0)], vec![]).unwrap();
        let out = resample(&rec, 256.0).unwrap();
        let want = tone(5.0, 256.0, 4.0);
        let got = &out.data[0];
        let n = want.len().min(got.len());
        let dot: f64 = (0..n).map(|i| want[i] * got[i]).sum();
        let nw: f64 = want[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
        let ng: f64 = got[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(dot / (nw * ng) >= 0.99, "correlation {}", dot / (nw * ng));
    }

    #[test]
    fn aliasing_tone_is_suppressed() {
        // 200 Hz is above the 128 Hz target Nyquist
        let rec = Recording::new(vec!["a".into()], 512.0, vec![tone(200.0, 512.0, 4.0)], vec![]).unwrap();
        let out = resample(&rec, 256.0).unwrap();
        let mid = &out.data[0][256..768];
        let rms = (mid.iter().map(|v| v * v).sum::<f64>() / mid.len() as f64).sqrt();
        assert!(rms < 0.05, "rms {rms}");
    }

    #[test]
    fn invalid_target_rejected() {
        let rec = Recording::new(vec!["a".into()], 256.0, vec![vec![0.0; 4]], vec![]).unwrap();
        assert_eq!(resample(&rec, 0.0).unwrap_err(), SigprocError::InvalidTarget(0.0));
    }
}
