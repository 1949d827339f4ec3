//! Lowering of a float [`Network`] to an 8-bit integer configuration under
//! the Xylo resource model.
//!
//! The path is `Network -> NeuronGraph -> QuantizedConfig`. The graph is a
//! lossless per-neuron view of the network; the quantized config is the
//! deployment artifact (integers only, scales kept as raw `f64` bits).

mod sim;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use sim::{count_synops, simulate_graph_float, simulate_quantized, EnergyReport, FixedSim};

use crate::lif::{dash_from_tau, MAX_DASH, MAX_SPIKES};
use crate::wavesense::{
    Network, Population, PopulationKind, Projection, SynapseGroup, Weights, MAX_HIDDEN, MAX_INPUTS, MAX_OUTPUTS,
};

pub const QUANT_VERSION: u32 = 1;
pub const WEIGHT_MIN: i32 = -128;
pub const WEIGHT_MAX: i32 = 127;
/// Largest number of distinct hidden targets of one hidden neuron.
pub const MAX_FAN_OUT: usize = 32;

#[derive(Debug, Error)]
pub enum HwMapError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("graph cannot be turned back into a network: {0}")]
    Irregular(String),
    #[error("malformed quantized config: {0}")]
    Malformed(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HwMapError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronRecord {
    pub id: usize,
    pub population: usize,
    pub kind: PopulationKind,
    pub tau_mem: f64,
    /// One time constant per synapse of the neuron.
    pub tau_syn: Vec<f64>,
    pub threshold: f64,
    pub v_reset: f64,
    pub bias: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpan {
    pub name: String,
    pub kind: PopulationKind,
    pub first: usize,
    pub size: usize,
}

/// A weight block feeding synapse `synapse` of every neuron of
/// `population`. Sources are population indices whose counts are summed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightBlock {
    pub population: usize,
    pub synapse: usize,
    pub sources: Vec<usize>,
    pub weights: Weights,
}

/// One expanded connection between two neurons.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub synapse: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuronGraph {
    pub dt: f64,
    pub populations: Vec<PopulationSpan>,
    pub neurons: Vec<NeuronRecord>,
    pub blocks: Vec<WeightBlock>,
    /// Carried through so the graph converts back into the same network.
    pub network: NetworkMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkMeta {
    pub version: u32,
    pub seed: u64,
    pub config: crate::wavesense::WaveSenseConfig,
    pub encoder_steps: Vec<f64>,
    pub encoder_cap: Option<u32>,
}

pub fn extract_graph(net: &Network) -> NeuronGraph {
    let mut populations = Vec::new();
    let mut neurons = Vec::new();
    for (p, pop) in net.populations.iter().enumerate() {
        populations.push(PopulationSpan {
            name: pop.name.clone(),
            kind: pop.kind,
            first: neurons.len(),
            size: pop.size,
        });
        for _ in 0..pop.size {
            neurons.push(NeuronRecord {
                id: neurons.len(),
                population: p,
                kind: pop.kind,
                tau_mem: pop.tau_mem,
                tau_syn: pop.groups.iter().map(|g| g.tau_syn).collect(),
                threshold: pop.threshold,
                v_reset: pop.v_reset,
                bias: pop.bias,
            });
        }
    }
    let blocks = net
        .projections()
        .map(|(p, g, pr)| WeightBlock {
            population: p,
            synapse: g,
            sources: pr.sources.clone(),
            weights: pr.weights.clone(),
        })
        .collect();
    NeuronGraph {
        dt: net.dt,
        populations,
        neurons,
        blocks,
        network: NetworkMeta {
            version: net.version,
            seed: net.seed,
            config: net.config.clone(),
            encoder_steps: net.encoder_steps.clone(),
            encoder_cap: net.encoder_cap,
        },
    }
}

impl NeuronGraph {
    pub fn weight_count(&self) -> usize {
        self.blocks.iter().map(|b| b.weights.len()).sum()
    }

    pub fn n_inputs(&self) -> usize {
        self.populations.first().map_or(0, |p| p.size)
    }

    /// Every connection, expanded over summed sources.
    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for b in &self.blocks {
            let dst = &self.populations[b.population];
            for &s in &b.sources {
                let src = &self.populations[s];
                match &b.weights {
                    Weights::Dense { matrix } => {
                        for r in 0..matrix.rows {
                            for j in 0..matrix.cols {
                                out.push(Edge {
                                    src: src.first + j,
                                    dst: dst.first + r,
                                    synapse: b.synapse,
                                    weight: matrix.get(r, j),
                                });
                            }
                        }
                    }
                    Weights::Diagonal { diag } => {
                        for (j, &w) in diag.iter().enumerate() {
                            out.push(Edge {
                                src: src.first + j,
                                dst: dst.first + j,
                                synapse: b.synapse,
                                weight: w,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// Rebuilds the network. Fails when neurons of one population carry
    /// different parameters, which a population-level network cannot hold.
    pub fn to_network(&self) -> Result<Network> {
        let mut pops = Vec::new();
        for span in &self.populations {
            let members = &self.neurons[span.first..span.first + span.size];
            let Some(first) = members.first() else {
                return Err(HwMapError::Irregular(format!("{} is empty", span.name)));
            };
            if members.iter().any(|n| {
                n.tau_mem != first.tau_mem
                    || n.tau_syn != first.tau_syn
                    || n.threshold != first.threshold
                    || n.v_reset != first.v_reset
                    || n.bias != first.bias
            }) {
                return Err(HwMapError::Irregular(format!(
                    "{} has per-neuron parameters",
                    span.name
                )));
            }
            pops.push(Population {
                name: span.name.clone(),
                kind: span.kind,
                size: span.size,
                tau_mem: first.tau_mem,
                threshold: first.threshold,
                v_reset: first.v_reset,
                bias: first.bias,
                groups: first
                    .tau_syn
                    .iter()
                    .map(|&tau_syn| SynapseGroup {
                        tau_syn,
                        projections: Vec::new(),
                    })
                    .collect(),
            });
        }
        for b in &self.blocks {
            let group = pops
                .get_mut(b.population)
                .and_then(|p| p.groups.get_mut(b.synapse))
                .ok_or_else(|| HwMapError::Irregular("block targets a missing synapse".into()))?;
            group.projections.push(Projection {
                sources: b.sources.clone(),
                weights: b.weights.clone(),
            });
        }
        let net = Network {
            version: self.network.version,
            seed: self.network.seed,
            dt: self.dt,
            config: self.network.config.clone(),
            encoder_steps: self.network.encoder_steps.clone(),
            encoder_cap: self.network.encoder_cap,
            populations: pops,
        };
        net.check_structure()
            .map_err(|e| HwMapError::Irregular(e.to_string()))?;
        Ok(net)
    }
}

/// How quantization scales are shared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleMode {
    /// One scale per destination population.
    #[default]
    PerPopulation,
    /// One scale per destination neuron. The readout keeps a shared scale so
    /// its currents stay comparable across classes.
    PerNeuron,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QPopulation {
    pub name: String,
    pub kind: PopulationKind,
    pub first: usize,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QNeuron {
    pub threshold: i32,
    pub bias: i32,
    pub dash_mem: u8,
    pub dash_syn: Vec<u8>,
    /// Bits of the `f64` scale applied to this neuron's inputs.
    pub scale_bits: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QLayout {
    Dense,
    Diagonal,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QBlock {
    pub population: usize,
    pub synapse: usize,
    pub sources: Vec<usize>,
    pub layout: QLayout,
    pub rows: usize,
    pub cols: usize,
    /// Row-major; 8-bit values stored wide so out-of-range data can be
    /// reported instead of silently truncated.
    pub weights: Vec<i32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizedConfig {
    pub version: u32,
    pub dt_bits: u64,
    pub max_spikes_per_step: u32,
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub populations: Vec<QPopulation>,
    pub neurons: Vec<QNeuron>,
    pub blocks: Vec<QBlock>,
    pub encoder_step_bits: Vec<u64>,
    pub encoder_cap: Option<u32>,
}

impl QuantizedConfig {
    pub fn dt(&self) -> f64 {
        f64::from_bits(self.dt_bits)
    }

    pub fn scale(&self, neuron: usize) -> f64 {
        f64::from_bits(self.neurons[neuron].scale_bits)
    }

    pub fn encoder_steps(&self) -> Vec<f64> {
        self.encoder_step_bits.iter().map(|b| f64::from_bits(*b)).collect()
    }

    pub fn output_index(&self) -> usize {
        self.populations.len().saturating_sub(1)
    }

    pub fn hidden_count(&self) -> usize {
        self.populations
            .iter()
            .filter(|p| p.kind == PopulationKind::Spiking)
            .map(|p| p.size)
            .sum()
    }

    pub fn weight_count(&self) -> usize {
        self.blocks.iter().map(|b| b.weights.len()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: QuantizedConfig = serde_json::from_str(text)?;
        if cfg.version != QUANT_VERSION {
            return Err(HwMapError::Malformed(format!("unsupported version {}", cfg.version)));
        }
        Ok(cfg)
    }

    /// Expanded integer connections `(src, dst, synapse, weight)`.
    pub fn edges(&self) -> Vec<(usize, usize, usize, i32)> {
        let mut out = Vec::new();
        for b in &self.blocks {
            let dst = &self.populations[b.population];
            for &s in &b.sources {
                let src = &self.populations[s];
                for r in 0..b.rows {
                    match b.layout {
                        QLayout::Dense => {
                            for j in 0..b.cols {
                                out.push((src.first + j, dst.first + r, b.synapse, b.weights[r * b.cols + j]));
                            }
                        }
                        QLayout::Diagonal => out.push((src.first + r, dst.first + r, b.synapse, b.weights[r])),
                    }
                }
            }
        }
        out
    }

    /// Per neuron: number of distinct targets in spiking populations
    /// reached through a nonzero weight.
    pub fn hidden_fan_out(&self) -> Vec<usize> {
        let mut targets = vec![std::collections::BTreeSet::new(); self.neurons.len()];
        let kind_of = self.neuron_kinds();
        for (src, dst, _, w) in self.edges() {
            if w != 0 && kind_of[dst] == PopulationKind::Spiking {
                targets[src].insert(dst);
            }
        }
        targets.iter().map(|t| t.len()).collect()
    }

    /// Per neuron: number of nonzero outgoing connections, readout included.
    /// Each one costs a synaptic operation per emitted spike.
    pub fn synop_fan_out(&self) -> Vec<usize> {
        let mut n = vec![0; self.neurons.len()];
        for (src, _, _, w) in self.edges() {
            if w != 0 {
                n[src] += 1;
            }
        }
        n
    }

    fn neuron_kinds(&self) -> Vec<PopulationKind> {
        let mut kinds = vec![PopulationKind::Input; self.neurons.len()];
        for p in &self.populations {
            for k in kinds.iter_mut().skip(p.first).take(p.size) {
                *k = p.kind;
            }
        }
        kinds
    }
}

/// Emitted when a destination has no nonzero incoming weight; its scale
/// falls back to 1.
#[derive(Clone, Debug, PartialEq)]
pub enum QuantizeWarning {
    DegenerateWeights { population: String, neuron: Option<usize> },
}

fn quantize_weight(w: f64, scale: f64) -> i32 {
    // f64::round rounds half away from zero
    ((w * scale).round() as i64).clamp(WEIGHT_MIN as i64, WEIGHT_MAX as i64) as i32
}

/// Maps every weight block to 8 bits with `scale = 127 / max|w|` per
/// destination, scaling thresholds and biases by the same factor.
pub fn quantize(graph: &NeuronGraph, mode: ScaleMode) -> (QuantizedConfig, Vec<QuantizeWarning>) {
    let n = graph.neurons.len();
    let mut max_in = vec![0.0f64; n];
    for e in graph.edges() {
        max_in[e.dst] = max_in[e.dst].max(e.weight.abs());
    }
    let mut warnings = Vec::new();
    let mut scale = vec![1.0f64; n];
    for span in &graph.populations {
        if span.kind == PopulationKind::Input {
            continue;
        }
        let ids = span.first..span.first + span.size;
        if mode == ScaleMode::PerNeuron && span.kind == PopulationKind::Spiking {
            for i in ids {
                if max_in[i] > 0.0 {
                    scale[i] = WEIGHT_MAX as f64 / max_in[i];
                } else {
                    log::warn!("{} neuron {i}: all incoming weights are zero, scale 1", span.name);
                    warnings.push(QuantizeWarning::DegenerateWeights {
                        population: span.name.clone(),
                        neuron: Some(i),
                    });
                }
            }
        } else {
            let m = max_in[ids.clone()].iter().copied().fold(0.0, f64::max);
            if m > 0.0 {
                ids.for_each(|i| scale[i] = WEIGHT_MAX as f64 / m);
            } else {
                log::warn!("{}: all incoming weights are zero, scale 1", span.name);
                warnings.push(QuantizeWarning::DegenerateWeights {
                    population: span.name.clone(),
                    neuron: None,
                });
            }
        }
    }

    let neurons = graph
        .neurons
        .iter()
        .map(|nr| {
            let s = scale[nr.id];
            let spiking = nr.kind == PopulationKind::Spiking;
            QNeuron {
                threshold: if spiking {
                    ((nr.threshold * s).round() as i32).max(1)
                } else {
                    0
                },
                bias: (nr.bias * s).round() as i32,
                dash_mem: if spiking {
                    dash_from_tau(nr.tau_mem, graph.dt)
                } else {
                    0
                },
                dash_syn: nr.tau_syn.iter().map(|&t| dash_from_tau(t, graph.dt)).collect(),
                scale_bits: s.to_bits(),
            }
        })
        .collect();

    let blocks = graph
        .blocks
        .iter()
        .map(|b| {
            let first = graph.populations[b.population].first;
            match &b.weights {
                Weights::Dense { matrix } => QBlock {
                    population: b.population,
                    synapse: b.synapse,
                    sources: b.sources.clone(),
                    layout: QLayout::Dense,
                    rows: matrix.rows,
                    cols: matrix.cols,
                    weights: (0..matrix.rows)
                        .flat_map(|r| {
                            let s = scale[first + r];
                            matrix.row(r).iter().map(move |&w| quantize_weight(w, s))
                        })
                        .collect(),
                },
                Weights::Diagonal { diag } => QBlock {
                    population: b.population,
                    synapse: b.synapse,
                    sources: b.sources.clone(),
                    layout: QLayout::Diagonal,
                    rows: diag.len(),
                    cols: diag.len(),
                    weights: diag
                        .iter()
                        .enumerate()
                        .map(|(r, &w)| quantize_weight(w, scale[first + r]))
                        .collect(),
                },
            }
        })
        .collect();

    let cfg = QuantizedConfig {
        version: QUANT_VERSION,
        dt_bits: graph.dt.to_bits(),
        max_spikes_per_step: MAX_SPIKES,
        n_inputs: graph.n_inputs(),
        n_outputs: graph.populations.last().map_or(0, |p| p.size),
        populations: graph
            .populations
            .iter()
            .map(|p| QPopulation {
                name: p.name.clone(),
                kind: p.kind,
                first: p.first,
                size: p.size,
            })
            .collect(),
        neurons,
        blocks,
        encoder_step_bits: graph.network.encoder_steps.iter().map(|s| s.to_bits()).collect(),
        encoder_cap: graph.network.encoder_cap,
    };
    (cfg, warnings)
}

/// Which resource bound a violation breaks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bound {
    Inputs,
    Outputs,
    Hidden,
    FanOut,
    WeightRange,
    Threshold,
    Dash,
    SpikesPerStep,
    EncoderCap,
    Structure,
}

impl Bound {
    pub fn label(self) -> String {
        match self {
            Bound::Inputs => format!("input > {MAX_INPUTS}"),
            Bound::Outputs => format!("output > {MAX_OUTPUTS}"),
            Bound::Hidden => format!("hidden > {MAX_HIDDEN}"),
            Bound::FanOut => format!("fanout > {MAX_FAN_OUT}"),
            Bound::WeightRange => format!("weight outside [{WEIGHT_MIN}, {WEIGHT_MAX}]"),
            Bound::Threshold => "threshold < 1".into(),
            Bound::Dash => format!("dash > {MAX_DASH}"),
            Bound::SpikesPerStep => format!("spikes per step > {MAX_SPIKES}"),
            Bound::EncoderCap => format!("encoder cap > {MAX_SPIKES}"),
            Bound::Structure => "malformed structure".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub bound: Bound,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.bound.label(), self.detail)
    }
}

/// Structural checks that make a config executable at all.
fn structure_violations(cfg: &QuantizedConfig) -> Vec<String> {
    let mut out = Vec::new();
    let n = cfg.neurons.len();
    let mut next = 0;
    for (p, pop) in cfg.populations.iter().enumerate() {
        if pop.first != next {
            out.push(format!("population {} does not start at neuron {next}", pop.name));
        }
        next = pop.first.saturating_add(pop.size);
        if (p == 0) != (pop.kind == PopulationKind::Input) {
            out.push(format!("population {} is misplaced as {:?}", pop.name, pop.kind));
        }
    }
    if next != n {
        out.push(format!("populations cover {next} neurons, config lists {n}"));
    }
    if cfg.populations.last().map(|p| p.kind) != Some(PopulationKind::Readout) {
        out.push("last population must be the readout".into());
    }
    if cfg.populations.first().map(|p| p.size) != Some(cfg.n_inputs) {
        out.push("n_inputs disagrees with the input population".into());
    }
    if cfg.populations.last().map(|p| p.size) != Some(cfg.n_outputs) {
        out.push("n_outputs disagrees with the readout population".into());
    }
    if !out.is_empty() {
        return out;
    }
    for b in &cfg.blocks {
        let Some(dst) = cfg.populations.get(b.population) else {
            out.push(format!("block targets missing population {}", b.population));
            continue;
        };
        if dst.kind == PopulationKind::Input {
            out.push(format!("block targets input population {}", dst.name));
            continue;
        }
        if cfg.neurons[dst.first..dst.first + dst.size]
            .iter()
            .any(|q| b.synapse >= q.dash_syn.len())
        {
            out.push(format!("{}: block targets missing synapse {}", dst.name, b.synapse));
        }
        if b.sources.is_empty() {
            out.push(format!("{}: block without sources", dst.name));
        }
        for &s in &b.sources {
            match cfg.populations.get(s) {
                Some(src) if s < b.population => {
                    let cols_ok = match b.layout {
                        QLayout::Dense => src.size == b.cols,
                        QLayout::Diagonal => src.size == b.rows && b.cols == b.rows,
                    };
                    if !cols_ok {
                        out.push(format!("{}: source {} has the wrong size", dst.name, src.name));
                    }
                }
                _ => out.push(format!("{}: source {s} is not an earlier population", dst.name)),
            }
        }
        let len = match b.layout {
            QLayout::Dense => b.rows * b.cols,
            QLayout::Diagonal => b.rows,
        };
        if b.rows != dst.size || b.weights.len() != len {
            out.push(format!("{}: block shape does not match population", dst.name));
        }
    }
    out
}

/// Every violated resource bound. An empty list means deployable.
pub fn validate(cfg: &QuantizedConfig) -> Vec<Violation> {
    let v = |bound, detail: String| Violation { bound, detail };
    let mut out: Vec<Violation> = structure_violations(cfg)
        .into_iter()
        .map(|d| v(Bound::Structure, d))
        .collect();
    if cfg.n_inputs > MAX_INPUTS {
        out.push(v(Bound::Inputs, format!("{} input channels", cfg.n_inputs)));
    }
    if cfg.n_outputs > MAX_OUTPUTS {
        out.push(v(Bound::Outputs, format!("{} output channels", cfg.n_outputs)));
    }
    let hidden = cfg.hidden_count();
    if hidden > MAX_HIDDEN {
        out.push(v(Bound::Hidden, format!("{hidden} hidden neurons")));
    }
    if cfg.max_spikes_per_step > MAX_SPIKES {
        out.push(v(
            Bound::SpikesPerStep,
            format!("{} spikes per step", cfg.max_spikes_per_step),
        ));
    }
    if let Some(cap) = cfg.encoder_cap.filter(|c| *c > MAX_SPIKES) {
        out.push(v(
            Bound::EncoderCap,
            format!("encoder emits up to {cap} spikes per step"),
        ));
    }
    for b in &cfg.blocks {
        if let Some(w) = b.weights.iter().find(|w| !(WEIGHT_MIN..=WEIGHT_MAX).contains(*w)) {
            let name = cfg.populations.get(b.population).map_or("?", |p| p.name.as_str());
            out.push(v(
                Bound::WeightRange,
                format!("{name} synapse {}: weight {w}", b.synapse),
            ));
        }
    }
    for pop in cfg.populations.iter().filter(|p| p.kind == PopulationKind::Spiking) {
        for (i, q) in cfg.neurons.iter().enumerate().skip(pop.first).take(pop.size) {
            if q.threshold < 1 {
                out.push(v(
                    Bound::Threshold,
                    format!("{} neuron {i}: threshold {}", pop.name, q.threshold),
                ));
            }
        }
    }
    for (i, q) in cfg.neurons.iter().enumerate() {
        if let Some(d) = std::iter::once(q.dash_mem)
            .chain(q.dash_syn.iter().copied())
            .find(|d| *d > MAX_DASH)
        {
            out.push(v(Bound::Dash, format!("neuron {i}: dash {d}")));
        }
    }
    if out.iter().all(|x| x.bound != Bound::Structure) {
        let kinds = cfg.neuron_kinds();
        for (i, f) in cfg.hidden_fan_out().into_iter().enumerate() {
            if kinds[i] == PopulationKind::Spiking && f > MAX_FAN_OUT {
                out.push(v(Bound::FanOut, format!("neuron {i} targets {f} hidden neurons")));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests;
