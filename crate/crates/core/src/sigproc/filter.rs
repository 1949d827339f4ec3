use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use super::{Recording, Result, SigprocError};

/// Band-pass edges and notch for the preprocessing cascade.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSpec {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub notch_hz: f64,
    pub notch_q: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            band_low_hz: 1.0,
            band_high_hz: 80.0,
            notch_hz: 50.0,
            notch_q: 30.0,
        }
    }
}

impl FilterSpec {
    pub fn check(&self, sample_rate: f64) -> Result<()> {
        let nyquist = sample_rate / 2.0;
        if !(self.band_low_hz > 0.0 && self.band_low_hz < self.band_high_hz && self.band_high_hz < nyquist) {
            return Err(SigprocError::InvalidBand(format!(
                "need 0 < {} < {} < {nyquist} Hz",
                self.band_low_hz, self.band_high_hz
            )));
        }
        if !(self.notch_hz > self.band_low_hz && self.notch_hz < self.band_high_hz) {
            return Err(SigprocError::InvalidBand(format!(
                "notch {} Hz outside band [{}, {}] Hz",
                self.notch_hz, self.band_low_hz, self.band_high_hz
            )));
        }
        if !(self.notch_q > 0.0) {
            return Err(SigprocError::InvalidBand(format!(
                "notch Q {} must be positive",
                self.notch_q
            )));
        }
        Ok(())
    }
}

/// Second-order section, transposed direct form II. Coefficients are
/// normalized so that a0 = 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
    z: [f64; 2],
}

impl Biquad {
    fn normalized(b: [f64; 3], a0: f64, a1: f64, a2: f64) -> Self {
        Self {
            b: [b[0] / a0, b[1] / a0, b[2] / a0],
            a: [a1 / a0, a2 / a0],
            z: [0.0; 2],
        }
    }

    /// Second-order Butterworth low-pass (bilinear transform).
    pub fn lowpass(cutoff_hz: f64, sample_rate: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / sample_rate;
        let alpha = w0.sin() / (2.0 * FRAC_1_SQRT_2);
        let c = w0.cos();
        Self::normalized(
            [(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0],
            1.0 + alpha,
            -2.0 * c,
            1.0 - alpha,
        )
    }

    /// Second-order Butterworth high-pass (bilinear transform).
    pub fn highpass(cutoff_hz: f64, sample_rate: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / sample_rate;
        let alpha = w0.sin() / (2.0 * FRAC_1_SQRT_2);
        let c = w0.cos();
        Self::normalized(
            [(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0],
            1.0 + alpha,
            -2.0 * c,
            1.0 - alpha,
        )
    }

    /// Notch with zeros on the unit circle at `center_hz`.
    pub fn notch(center_hz: f64, q: f64, sample_rate: f64) -> Self {
        let w0 = 2.0 * PI * center_hz / sample_rate;
        let alpha = w0.sin() / (2.0 * q);
        let c = w0.cos();
        Self::normalized([1.0, -2.0 * c, 1.0], 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.z[0];
        self.z[0] = self.b[1] * x - self.a[0] * y + self.z[1];
        self.z[1] = self.b[2] * x - self.a[1] * y;
        y
    }

    pub fn reset(&mut self) {
        self.z = [0.0; 2];
    }
}

/// Causal cascade: high-pass, low-pass, notch.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    sections: Vec<Biquad>,
}

impl FilterBank {
    pub fn new(spec: &FilterSpec, sample_rate: f64) -> Result<Self> {
        spec.check(sample_rate)?;
        Ok(Self {
            sections: vec![
                Biquad::highpass(spec.band_low_hz, sample_rate),
                Biquad::lowpass(spec.band_high_hz, sample_rate),
                Biquad::notch(spec.notch_hz, spec.notch_q, sample_rate),
            ],
        })
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        self.sections.iter_mut().fold(x, |acc, s| s.process(acc))
    }

    pub fn reset(&mut self) {
        self.sections.iter_mut().for_each(Biquad::reset);
    }
}

/// Band-pass then notch, applied independently and causally to every channel.
pub fn apply_filters(recording: &Recording, spec: &FilterSpec) -> Result<Recording> {
    let prototype = FilterBank::new(spec, recording.sample_rate)?;
    let mut out = recording.clone();
    for series in out.data.iter_mut() {
        let mut bank = prototype.clone();
        series.iter_mut().for_each(|v| *v = bank.process(*v));
    }
    Ok(out)
}
