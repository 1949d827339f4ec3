//! Leaky integrate-and-fire neurons with exponential synapses.
//!
//! Two interchangeable regimes share one update order per timestep:
//!
//! 1. synaptic current decays and receives the weighted input,
//! 2. membrane decays and integrates the synaptic current (plus bias),
//! 3. up to [`MAX_SPIKES`] spikes are emitted and the membrane is reduced by
//!    one threshold per spike (subtractive reset).
//!
//! The real-valued path uses exact per-step factors `exp(-dt / tau)`. The
//! integer path keeps 16-bit saturating state and decays with
//! `x - (x >> dash)`, i.e. a factor of `1 - 2^-dash` per step.

use serde::{Deserialize, Serialize};

/// Spikes a neuron may emit in one timestep.
pub const MAX_SPIKES: u32 = 31;
/// Saturation bound of 16-bit neuron state (symmetric).
pub const STATE_MAX: i32 = i16::MAX as i32;
/// Largest bit-shift decay.
pub const MAX_DASH: u8 = 15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifParams {
    pub tau_mem: f64,
    pub tau_syn: f64,
    pub threshold: f64,
    pub v_reset: f64,
    pub dt: f64,
    pub bias: f64,
}

impl LifParams {
    pub fn check(&self) -> Result<(), String> {
        if !(self.dt > 0.0) {
            return Err(format!("dt {} must be positive", self.dt));
        }
        if !(self.tau_mem >= self.dt && self.tau_syn >= self.dt) {
            return Err(format!(
                "time constants (mem {}, syn {}) must be at least dt {}",
                self.tau_mem, self.tau_syn, self.dt
            ));
        }
        if !(self.threshold > self.v_reset) {
            return Err(format!(
                "threshold {} must exceed reset {}",
                self.threshold, self.v_reset
            ));
        }
        if !self.bias.is_finite() {
            return Err("bias must be finite".into());
        }
        Ok(())
    }

    pub fn mem_decay(&self) -> f64 {
        decay_factor(self.tau_mem, self.dt)
    }

    pub fn syn_decay(&self) -> f64 {
        decay_factor(self.tau_syn, self.dt)
    }
}

/// Exact per-step decay of a first-order system.
pub fn decay_factor(tau: f64, dt: f64) -> f64 {
    (-dt / tau).exp()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LifStateF {
    pub v_mem: f64,
    pub i_syn: f64,
}

/// Spike count for a membrane value. Reset is subtractive by
/// `threshold - v_reset` per spike, so the count is the number of whole
/// such intervals above `v_reset`.
#[inline]
pub fn spike_count(v_mem: f64, threshold: f64, v_reset: f64) -> u32 {
    if v_mem >= threshold {
        let k = ((v_mem - v_reset) / (threshold - v_reset)).floor();
        (k.min(MAX_SPIKES as f64) as u32).max(1)
    } else {
        0
    }
}

/// Membrane update given the summed synaptic current. Returns the membrane
/// before reset, the membrane after reset and the spike count.
#[inline]
pub fn membrane_step_float(
    v_mem: f64,
    mem_decay: f64,
    current: f64,
    bias: f64,
    threshold: f64,
    v_reset: f64,
) -> (f64, f64, u32) {
    let v_pre = v_mem * mem_decay + current + bias;
    let k = spike_count(v_pre, threshold, v_reset);
    if k == 0 {
        return (v_pre, v_pre, 0);
    }
    (v_pre, v_pre - k as f64 * (threshold - v_reset), k)
}

pub fn lif_step_float(state: LifStateF, input_current: f64, params: &LifParams) -> (LifStateF, u32) {
    let i_syn = state.i_syn * params.syn_decay() + input_current;
    let (_, v_mem, k) = membrane_step_float(
        state.v_mem,
        params.mem_decay(),
        i_syn,
        params.bias,
        params.threshold,
        params.v_reset,
    );
    (LifStateF { v_mem, i_syn }, k)
}

/// `round(log2(tau / dt))` clamped to `[0, 15]`. The effective per-step
/// decay of the integer path is then `1 - 2^-dash`.
pub fn dash_from_tau(tau: f64, dt: f64) -> u8 {
    let d = (tau / dt).log2().round();
    if d.is_nan() {
        return 0;
    }
    d.clamp(0.0, MAX_DASH as f64) as u8
}

/// Per-step decay factor realised by a bit-shift of `dash`.
pub fn dash_decay(dash: u8) -> f64 {
    1.0 - (0.5f64).powi(dash as i32)
}

/// Counts clamping events of the integer path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SaturationTally {
    pub events: u64,
}

impl SaturationTally {
    #[inline]
    pub fn saturate(&mut self, x: i64) -> i16 {
        if x > STATE_MAX as i64 {
            self.events += 1;
            STATE_MAX as i16
        } else if x < -(STATE_MAX as i64) {
            self.events += 1;
            -STATE_MAX as i16
        } else {
            x as i16
        }
    }
}

#[inline]
fn leak(x: i16, dash: u8) -> i64 {
    x as i64 - ((x as i64) >> dash)
}

/// Synaptic update `i - (i >> dash) + input`, saturating.
#[inline]
pub fn synapse_step_fixed(i_syn: i16, dash: u8, input: i64, tally: &mut SaturationTally) -> i16 {
    tally.saturate(leak(i_syn, dash) + input)
}

/// Adds a weighted contribution to a synaptic current, saturating.
#[inline]
pub fn synapse_add_fixed(i_syn: i16, input: i64, tally: &mut SaturationTally) -> i16 {
    tally.saturate(i_syn as i64 + input)
}

/// Membrane update `v - (v >> dash) + current + bias`, then subtractive
/// multi-spike reset against `threshold`.
#[inline]
pub fn membrane_step_fixed(
    v_mem: i16,
    dash: u8,
    current: i64,
    bias: i64,
    threshold: i32,
    tally: &mut SaturationTally,
) -> (i16, u32) {
    let v = tally.saturate(leak(v_mem, dash) + current + bias) as i32;
    if threshold > 0 && v >= threshold {
        let k = ((v / threshold) as u32).min(MAX_SPIKES);
        ((v - k as i32 * threshold) as i16, k)
    } else {
        (v as i16, 0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LifStateQ {
    pub v_mem: i16,
    pub i_syn: i16,
    pub dash_mem: u8,
    pub dash_syn: u8,
}

/// Quantized per-neuron constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixedParams {
    pub threshold: i32,
    pub bias: i32,
}

pub fn lif_step_fixed(
    state: LifStateQ,
    weighted_input: i64,
    params: &FixedParams,
    tally: &mut SaturationTally,
) -> (LifStateQ, u32) {
    let i_syn = synapse_step_fixed(state.i_syn, state.dash_syn, weighted_input, tally);
    let (v_mem, k) = membrane_step_fixed(
        state.v_mem,
        state.dash_mem,
        i_syn as i64,
        params.bias as i64,
        params.threshold,
        tally,
    );
    (LifStateQ { v_mem, i_syn, ..state }, k)
}
