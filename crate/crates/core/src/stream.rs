//! Sample-by-sample detection: encoder, network, periodic decisions and the
//! four-in-a-row alarm state machine.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::EncoderState;
use crate::hwmap::{FixedSim, QuantizedConfig};
use crate::sigproc::{Recording, Trial};
use crate::wavesense::{argmax, peak_currents, FloatSim, Network};

/// Identical decisions needed to enter or leave the alarm state.
pub const ALARM_RUN: u8 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum StreamError {
    #[error("shape mismatch: engine expects {expected} channels, sample has {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("decision period {period_s} s is not a positive multiple of dt {dt} s")]
    InvalidPeriod { period_s: f64, dt: f64 },
    #[error("non-finite sample on channel {0}")]
    NonFiniteSample(usize),
    #[error("engine has no encoder steps")]
    MissingEncoderSteps,
}

pub type Result<T> = std::result::Result<T, StreamError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlarmStatus {
    #[default]
    Silent,
    Alarm,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmState {
    pub status: AlarmStatus,
    pub consecutive_positive: u8,
    pub consecutive_negative: u8,
}

/// Counts runs of identical decisions; a run of [`ALARM_RUN`] opposite to
/// the current status flips it and clears both counters.
pub fn alarm_update(state: AlarmState, positive: bool) -> AlarmState {
    let mut s = state;
    if positive {
        s.consecutive_positive = (s.consecutive_positive + 1).min(ALARM_RUN);
        s.consecutive_negative = 0;
    } else {
        s.consecutive_negative = (s.consecutive_negative + 1).min(ALARM_RUN);
        s.consecutive_positive = 0;
    }
    let flip = match s.status {
        AlarmStatus::Silent => s.consecutive_positive == ALARM_RUN,
        AlarmStatus::Alarm => s.consecutive_negative == ALARM_RUN,
    };
    if flip {
        AlarmState {
            status: match s.status {
                AlarmStatus::Silent => AlarmStatus::Alarm,
                AlarmStatus::Alarm => AlarmStatus::Silent,
            },
            consecutive_positive: 0,
            consecutive_negative: 0,
        }
    } else {
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    pub decision_period_s: f64,
    /// Decision periods whose peaks enter each decision.
    pub context_periods: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            decision_period_s: 0.5,
            context_periods: 1,
        }
    }
}

/// Whole periods of `dt` in `period_s`, if it is an integer multiple.
pub fn period_steps(period_s: f64, dt: f64) -> Result<usize> {
    let k = (period_s / dt).round();
    if !(k >= 1.0) || (k * dt - period_s).abs() > 1e-9 * period_s.abs().max(1.0) {
        return Err(StreamError::InvalidPeriod { period_s, dt });
    }
    Ok(k as usize)
}

#[derive(Clone, Debug)]
enum Backend {
    Float { net: Box<Network>, sim: FloatSim },
    Fixed { cfg: Box<QuantizedConfig>, sim: FixedSim },
}

impl Backend {
    fn step(&mut self, input: &[u32]) -> Vec<f64> {
        match self {
            Backend::Float { net, sim } => {
                sim.step(net, input, None);
                sim.current(net.output_index())
            }
            Backend::Fixed { cfg, sim } => {
                sim.step(cfg, input);
                sim.readout(cfg)
            }
        }
    }
}

/// One emitted decision.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub time_s: f64,
    pub class: usize,
    pub alarm: AlarmState,
}

/// Streaming detector. Its state is bounded by the network size and the
/// decision context, not by the stream length.
#[derive(Clone, Debug)]
pub struct StreamEngine {
    backend: Backend,
    steps: Vec<f64>,
    cap: Option<u32>,
    encoders: Vec<Option<EncoderState>>,
    column: Vec<u32>,
    dt: f64,
    period: usize,
    context: usize,
    past_peaks: VecDeque<Vec<f64>>,
    running_peak: Vec<f64>,
    in_period: usize,
    periods_done: u64,
    alarm: AlarmState,
}

impl StreamEngine {
    pub fn float(net: &Network, config: &StreamConfig) -> Result<Self> {
        let backend = Backend::Float {
            net: Box::new(net.clone()),
            sim: FloatSim::new(net),
        };
        Self::with_backend(
            backend,
            net.dt,
            net.encoder_steps.clone(),
            net.encoder_cap,
            net.n_classes(),
            config,
        )
    }

    pub fn fixed(cfg: &QuantizedConfig, config: &StreamConfig) -> Result<Self> {
        let backend = Backend::Fixed {
            cfg: Box::new(cfg.clone()),
            sim: FixedSim::new(cfg),
        };
        Self::with_backend(
            backend,
            cfg.dt(),
            cfg.encoder_steps(),
            cfg.encoder_cap,
            cfg.n_outputs,
            config,
        )
    }

    fn with_backend(
        backend: Backend,
        dt: f64,
        steps: Vec<f64>,
        cap: Option<u32>,
        n_classes: usize,
        config: &StreamConfig,
    ) -> Result<Self> {
        if steps.is_empty() {
            return Err(StreamError::MissingEncoderSteps);
        }
        let period = period_steps(config.decision_period_s, dt)?;
        Ok(Self {
            backend,
            encoders: vec![None; steps.len()],
            column: vec![0; 2 * steps.len()],
            steps,
            cap,
            dt,
            period,
            context: config.context_periods.max(1),
            past_peaks: VecDeque::new(),
            running_peak: vec![f64::NEG_INFINITY; n_classes],
            in_period: 0,
            periods_done: 0,
            alarm: AlarmState::default(),
        })
    }

    pub fn n_channels(&self) -> usize {
        self.steps.len()
    }

    pub fn period_steps(&self) -> usize {
        self.period
    }

    pub fn alarm(&self) -> AlarmState {
        self.alarm
    }

    /// Number of stored state values, simulator included.
    pub fn state_len(&self) -> usize {
        let sim = match &self.backend {
            Backend::Float { sim, .. } => sim.state_len(),
            Backend::Fixed { sim, .. } => sim.state_len(),
        };
        sim + self.encoders.len()
            + self.column.len()
            + self.running_peak.len()
            + self.past_peaks.iter().map(Vec::len).sum::<usize>()
    }

    /// Feeds one preprocessed multichannel sample. Returns a decision at
    /// the end of every decision period.
    pub fn stream_step(&mut self, sample: &[f64]) -> Result<Option<Decision>> {
        if sample.len() != self.steps.len() {
            return Err(StreamError::ShapeMismatch {
                expected: self.steps.len(),
                got: sample.len(),
            });
        }
        if let Some(c) = sample.iter().position(|x| !x.is_finite()) {
            return Err(StreamError::NonFiniteSample(c));
        }
        for (c, &x) in sample.iter().enumerate() {
            let enc = self.encoders[c].get_or_insert_with(|| EncoderState::new(x, self.steps[c]));
            let (up, down, _) = enc.advance(x, self.cap);
            self.column[2 * c] = up;
            self.column[2 * c + 1] = down;
        }
        let currents = self.backend.step(&self.column);
        for (p, c) in self.running_peak.iter_mut().zip(&currents) {
            *p = p.max(*c);
        }
        self.in_period += 1;
        if self.in_period < self.period {
            return Ok(None);
        }
        let finished = std::mem::replace(&mut self.running_peak, vec![f64::NEG_INFINITY; currents.len()]);
        self.in_period = 0;
        self.past_peaks.push_back(finished);
        while self.past_peaks.len() > self.context {
            self.past_peaks.pop_front();
        }
        let peaks: Vec<f64> = (0..currents.len())
            .map(|c| self.past_peaks.iter().map(|p| p[c]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let class = argmax(&peaks);
        self.alarm = alarm_update(self.alarm, class == 1);
        self.periods_done += 1;
        Ok(Some(Decision {
            time_s: self.periods_done as f64 * self.period as f64 * self.dt,
            class,
            alarm: self.alarm,
        }))
    }
}

/// Decisions from a full readout trace, one per complete period, each over
/// the trailing `context_periods` periods. The batch counterpart of
/// [`StreamEngine::stream_step`].
pub fn periodic_decisions(currents: &[Vec<f64>], period: usize, context_periods: usize) -> Vec<usize> {
    let t_len = currents.first().map_or(0, Vec::len);
    let context = context_periods.max(1);
    (0..t_len / period)
        .map(|k| {
            let from = (k + 1).saturating_sub(context) * period;
            argmax(&peak_currents(currents, from, (k + 1) * period))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub time_s: f64,
    pub decision: usize,
    pub alarm: AlarmStatus,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionTimeline {
    pub entries: Vec<TimelineEntry>,
    /// `(time_s, new status)` at every alarm change.
    pub transitions: Vec<(f64, AlarmStatus)>,
}

impl DetectionTimeline {
    /// Closed alarm intervals; an alarm still raised at the end closes at
    /// the last decision time.
    pub fn alarm_intervals(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut open = None;
        for &(t, s) in &self.transitions {
            match s {
                AlarmStatus::Alarm => open = Some(t),
                AlarmStatus::Silent => {
                    if let Some(start) = open.take() {
                        out.push((start, t));
                    }
                }
            }
        }
        if let (Some(start), Some(last)) = (open, self.entries.last()) {
            out.push((start, last.time_s));
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut *out, e)?;
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Drives `engine` over every sample of a preprocessed recording.
pub fn replay(recording: &Recording, engine: &mut StreamEngine) -> Result<DetectionTimeline> {
    replay_with(recording, engine, |_| {})
}

/// [`replay`] with a callback on every alarm transition.
pub fn replay_with(
    recording: &Recording,
    engine: &mut StreamEngine,
    mut on_transition: impl FnMut(&TimelineEntry),
) -> Result<DetectionTimeline> {
    if recording.n_channels() != engine.n_channels() {
        return Err(StreamError::ShapeMismatch {
            expected: engine.n_channels(),
            got: recording.n_channels(),
        });
    }
    let mut timeline = DetectionTimeline::default();
    let mut status = engine.alarm().status;
    let mut sample = vec![0.0; recording.n_channels()];
    for i in 0..recording.n_samples() {
        for (s, ch) in sample.iter_mut().zip(&recording.data) {
            *s = ch[i];
        }
        if let Some(d) = engine.stream_step(&sample)? {
            let entry = TimelineEntry {
                time_s: d.time_s,
                decision: d.class,
                alarm: d.alarm.status,
            };
            if d.alarm.status != status {
                status = d.alarm.status;
                timeline.transitions.push((d.time_s, status));
                on_transition(&entry);
            }
            timeline.entries.push(entry);
        }
    }
    Ok(timeline)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialLatency {
    pub label: usize,
    /// First positive decision time from trial start. For negatives this is
    /// the first false-positive time.
    pub latency_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStat {
    pub trials: Vec<TrialLatency>,
    /// Median over detected positives.
    pub median_s: Option<f64>,
    pub detection_rate: Option<f64>,
    pub false_positive_rate: Option<f64>,
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    })
}

/// Streams every trial through a fresh engine and records the time of the
/// first positive decision.
pub fn measure_latency(factory: impl Fn() -> Result<StreamEngine>, trials: &[Trial]) -> Result<LatencyStat> {
    let mut out = Vec::with_capacity(trials.len());
    for trial in trials {
        let mut engine = factory()?;
        let n = trial.data.first().map_or(0, Vec::len);
        let mut sample = vec![0.0; trial.data.len()];
        let mut first = None;
        for i in 0..n {
            for (s, ch) in sample.iter_mut().zip(&trial.data) {
                *s = ch[i];
            }
            if let Some(d) = engine.stream_step(&sample)? {
                if d.class == 1 {
                    first = Some(d.time_s);
                    break;
                }
            }
        }
        out.push(TrialLatency {
            label: trial.label.class(),
            latency_s: first,
        });
    }
    let positives: Vec<&TrialLatency> = out.iter().filter(|t| t.label == 1).collect();
    let negatives: Vec<&TrialLatency> = out.iter().filter(|t| t.label != 1).collect();
    let rate = |xs: &[&TrialLatency]| {
        (!xs.is_empty()).then(|| xs.iter().filter(|t| t.latency_s.is_some()).count() as f64 / xs.len() as f64)
    };
    Ok(LatencyStat {
        median_s: median(positives.iter().filter_map(|t| t.latency_s).collect()),
        detection_rate: rate(&positives),
        false_positive_rate: rate(&negatives),
        trials: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavesense::{build_network, WaveSenseConfig};

    fn run(start: AlarmStatus, decisions: &[u8]) -> AlarmStatus {
        let mut s = AlarmState {
            status: start,
            ..AlarmState::default()
        };
        for &d in decisions {
            s = alarm_update(s, d == 1);
        }
        s.status
    }

    #[test]
    fn alarm_examples() {
        assert_eq!(run(AlarmStatus::Silent, &[1, 1, 1]), AlarmStatus::Silent);
        assert_eq!(run(AlarmStatus::Silent, &[1, 1, 1, 1]), AlarmStatus::Alarm);
        assert_eq!(run(AlarmStatus::Silent, &[1, 1, 0, 1, 1, 1]), AlarmStatus::Silent);
        assert_eq!(run(AlarmStatus::Alarm, &[0, 0, 0, 0]), AlarmStatus::Silent);
        assert_eq!(run(AlarmStatus::Alarm, &[0, 0, 0, 1, 0, 0, 0]), AlarmStatus::Alarm);
    }

    #[test]
    fn counters_stay_bounded_and_reset_on_change() {
        let mut s = AlarmState::default();
        for _ in 0..10 {
            s = alarm_update(s, false);
            assert!(s.consecutive_negative <= ALARM_RUN);
        }
        for _ in 0..4 {
            s = alarm_update(s, true);
        }
        assert_eq!(
            s,
            AlarmState {
                status: AlarmStatus::Alarm,
                consecutive_positive: 0,
                consecutive_negative: 0
            }
        );
    }

    #[test]
    fn period_must_divide_evenly() {
        let dt = 1.0 / 256.0;
        assert_eq!(period_steps(0.5, dt), Ok(128));
        assert!(period_steps(0.3, dt).is_err());
        assert!(period_steps(0.0, dt).is_err());
    }

    #[test]
    fn batch_decisions_use_trailing_windows() {
        let currents = vec![vec![0.0, 5.0, 0.0, 0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0, 1.0, 2.0, 0.0]];
        assert_eq!(periodic_decisions(&currents, 2, 1), vec![0, 1, 1]);
        assert_eq!(periodic_decisions(&currents, 2, 2), vec![0, 0, 1]);
    }

    #[test]
    fn zero_stream_is_silent_class_zero() {
        let mut net = build_network(&WaveSenseConfig::default(), 0).unwrap();
        net.encoder_steps = vec![1.0, 1.0];
        let mut engine = StreamEngine::float(&net, &StreamConfig::default()).unwrap();
        let mut decisions = Vec::new();
        for _ in 0..1280 {
            if let Some(d) = engine.stream_step(&[0.0, 0.0]).unwrap() {
                decisions.push(d);
            }
        }
        assert_eq!(decisions.len(), 10);
        assert!(decisions
            .iter()
            .all(|d| d.class == 0 && d.alarm.status == AlarmStatus::Silent));
        assert_eq!(decisions[0].time_s, 0.5);
    }

    #[test]
    fn short_recording_gives_empty_timeline() {
        let mut net = build_network(&WaveSenseConfig::default(), 0).unwrap();
        net.encoder_steps = vec![1.0, 1.0];
        let mut engine = StreamEngine::float(&net, &StreamConfig::default()).unwrap();
        let rec = Recording::new(vec!["a".into(), "b".into()], 256.0, vec![vec![0.0; 100]; 2], vec![]).unwrap();
        assert_eq!(replay(&rec, &mut engine).unwrap(), DetectionTimeline::default());
    }

    #[test]
    fn sample_width_checked() {
        let mut net = build_network(&WaveSenseConfig::default(), 0).unwrap();
        net.encoder_steps = vec![1.0, 1.0];
        let mut engine = StreamEngine::float(&net, &StreamConfig::default()).unwrap();
        assert_eq!(
            engine.stream_step(&[0.0]),
            Err(StreamError::ShapeMismatch { expected: 2, got: 1 })
        );
    }

    #[test]
    fn intervals_from_transitions() {
        let entries = (1..=6)
            .map(|k| TimelineEntry {
                time_s: k as f64,
                decision: 0,
                alarm: AlarmStatus::Silent,
            })
            .collect();
        let tl = DetectionTimeline {
            entries,
            transitions: vec![
                (2.0, AlarmStatus::Alarm),
                (4.0, AlarmStatus::Silent),
                (5.0, AlarmStatus::Alarm),
            ],
        };
        assert_eq!(tl.alarm_intervals(), vec![(2.0, 4.0), (5.0, 6.0)]);
    }

    #[test]
    fn median_over_detected_only() {
        assert_eq!(median(vec![1.0, 0.5, 0.5]), Some(0.5));
        assert_eq!(median(vec![0.5, 1.0]), Some(0.75));
        assert_eq!(median(vec![]), None);
    }

    fn noise_net(seed: u64) -> Network {
        let mut net = build_network(&WaveSenseConfig::default(), seed).unwrap();
        net.encoder_steps = vec![0.5, 0.5];
        net
    }

    fn noise(rng: &mut rand_chacha::ChaCha8Rng, n: usize, gain: f64) -> Vec<Vec<f64>> {
        use rand::Rng;
        (0..2).map(|_| (0..n).map(|_| gain * rng.random_range(-1.0..1.0)).collect()).collect()
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(12))]

        #[test]
        fn engine_state_does_not_grow(seed in 0u64..1000, periods in 2usize..40, context in 1usize..4, fixed: bool) {
            use rand::SeedableRng;
            let net = noise_net(seed);
            let cfg = StreamConfig { decision_period_s: 0.125, context_periods: context };
            let mut engine = if fixed {
                let q = crate::hwmap::quantize(&crate::hwmap::extract_graph(&net), crate::hwmap::ScaleMode::PerPopulation).0;
                StreamEngine::fixed(&q, &cfg).unwrap()
            } else {
                StreamEngine::float(&net, &cfg).unwrap()
            };
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = periods * engine.period_steps();
            let data = noise(&mut rng, n, 20.0);
            let mut size_after_context = None;
            for i in 0..n {
                engine.stream_step(&[data[0][i], data[1][i]]).unwrap();
                if i + 1 == context * engine.period_steps() {
                    size_after_context = Some(engine.state_len());
                }
            }
            if let Some(s) = size_after_context {
                proptest::prop_assert_eq!(engine.state_len(), s);
            }
        }

        #[test]
        fn latencies_are_whole_periods(seed in 0u64..1000, period_steps in 1usize..5, gain in 1.0f64..50.0) {
            use rand::SeedableRng;
            let net = noise_net(seed);
            let period_s = period_steps as f64 * 32.0 / 256.0;
            let cfg = StreamConfig { decision_period_s: period_s, context_periods: 1 };
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
            let trials: Vec<Trial> = (0..4)
                .map(|k| Trial {
                    data: noise(&mut rng, 512, gain),
                    label: crate::sigproc::TrialLabel::from_class(k % 2),
                    origin_s: 0.0,
                })
                .collect();
            let stat = measure_latency(|| StreamEngine::float(&net, &cfg), &trials).unwrap();
            for t in stat.trials.iter().filter_map(|t| t.latency_s) {
                let k = t / period_s;
                proptest::prop_assert!(k >= 1.0 && (k - k.round()).abs() < 1e-9, "{t} s at period {period_s}");
            }
        }
    }
}
