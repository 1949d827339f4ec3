//! WaveSense: stacked blocks of dilated (multi-time-constant) synapses with
//! residual and skip paths, read out through non-spiking output units.
//!
//! A [`Network`] is a feedforward DAG of neuron populations. Population 0 is
//! the input (the raster channels); the last population is the readout whose
//! synaptic currents are the class evidence. Each population owns one or more
//! synapse groups (one time constant each) and each group sums projections
//! from earlier populations. A projection may list several sources; their
//! spike counts are added elementwise before weighting, which is how the
//! residual sum of a block input is expressed.
//!
//! Default wiring with `C` neurons per block and `B` blocks:
//!
//! ```text
//! input --dense--> stem (C)
//! block b:  x_b = stem + res_0 + ... + res_{b-1}
//!           x_b --diag(tau 2b)--+
//!           x_b --diag(tau 2b+1)+--> hidden_b (C) --dense--> res_b (C)
//!           hidden_b --dense (skip)--> readout.hidden
//! x_B --dense--> readout.hidden (R) --dense--> readout.out (n_classes)
//! ```
//!
//! Spikes propagate through the whole DAG within one timestep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::SpikeRaster;
use crate::lif::{decay_factor, membrane_step_float, LifParams};
use crate::matrix::Matrix;

pub const FORMAT_VERSION: u32 = 1;
pub const MAX_INPUTS: usize = 16;
pub const MAX_OUTPUTS: usize = 8;
pub const MAX_HIDDEN: usize = 1000;

#[derive(Debug, Error)]
pub enum WaveSenseError {
    #[error("configuration violates {0}")]
    ConfigViolation(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("malformed network: {0}")]
    Malformed(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, WaveSenseError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveSenseConfig {
    /// Raster channels, i.e. twice the number of EEG channels.
    pub n_input_channels: usize,
    pub n_classes: usize,
    pub n_blocks: usize,
    pub neurons_per_block: usize,
    /// Two synaptic time constants per block, seconds.
    pub dilation_taus: Vec<f64>,
    pub readout_hidden: usize,
    /// Synaptic time constant of the output units, seconds.
    pub readout_tau_syn: f64,
    /// Scales the initial weight bound, see [`init_bound`].
    pub init_gain: f64,
    pub lif: LifParams,
}

impl Default for WaveSenseConfig {
    fn default() -> Self {
        let dt = 1.0 / 256.0;
        let n_blocks = 4;
        Self {
            n_input_channels: 4,
            n_classes: 2,
            n_blocks,
            neurons_per_block: 16,
            dilation_taus: (0..2 * n_blocks).map(|k| 2.0 * dt * (1u64 << k) as f64).collect(),
            readout_hidden: 16,
            readout_tau_syn: 32.0 * dt,
            init_gain: 0.7,
            lif: LifParams {
                tau_mem: 8.0 * dt,
                tau_syn: 8.0 * dt,
                threshold: 0.6,
                v_reset: 0.0,
                dt,
                bias: 0.0,
            },
        }
    }
}

impl WaveSenseConfig {
    pub fn hidden_neurons(&self) -> usize {
        self.neurons_per_block * (1 + 2 * self.n_blocks) + self.readout_hidden
    }

    pub fn check(&self) -> Result<()> {
        let bad = |s: String| Err(WaveSenseError::ConfigViolation(s));
        if self.n_input_channels == 0 || self.n_input_channels > MAX_INPUTS {
            return bad(format!("inputs: {} not in 1..={MAX_INPUTS}", self.n_input_channels));
        }
        if self.n_classes == 0 || self.n_classes > MAX_OUTPUTS {
            return bad(format!("classes: {} not in 1..={MAX_OUTPUTS}", self.n_classes));
        }
        if self.neurons_per_block == 0 {
            return bad("neurons_per_block must be positive".into());
        }
        if self.hidden_neurons() > MAX_HIDDEN {
            return bad(format!(
                "hidden > {MAX_HIDDEN}: {} hidden neurons",
                self.hidden_neurons()
            ));
        }
        if self.dilation_taus.len() != 2 * self.n_blocks {
            return bad(format!(
                "dilation_taus: {} entries for {} blocks (need 2 per block)",
                self.dilation_taus.len(),
                self.n_blocks
            ));
        }
        if !(self.init_gain > 0.0 && self.init_gain.is_finite()) {
            return bad(format!("init_gain {} must be positive", self.init_gain));
        }
        self.lif.check().map_err(WaveSenseError::ConfigViolation)?;
        let dt = self.lif.dt;
        if let Some(t) = self
            .dilation_taus
            .iter()
            .chain([&self.readout_tau_syn])
            .find(|t| !(**t >= dt && t.is_finite()))
        {
            return bad(format!("synaptic time constant {t} s shorter than dt {dt} s"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PopulationKind {
    Input,
    Spiking,
    /// Non-spiking integrators; their summed synaptic current is the output.
    Readout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Weights {
    /// `dst x src` matrix.
    Dense { matrix: Matrix },
    /// One weight per neuron, `dst == src`.
    Diagonal { diag: Vec<f64> },
}

impl Weights {
    pub fn as_slice(&self) -> &[f64] {
        match self {
            Weights::Dense { matrix } => &matrix.data,
            Weights::Diagonal { diag } => diag,
        }
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        match self {
            Weights::Dense { matrix } => &mut matrix.data,
            Weights::Diagonal { diag } => diag,
        }
    }

    pub fn len(&self) -> usize {
        self.as_slice().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Weight from source neuron `src` to destination neuron `dst`, if the
    /// pair is connected.
    pub fn get(&self, dst: usize, src: usize) -> Option<f64> {
        match self {
            Weights::Dense { matrix } => Some(matrix.get(dst, src)),
            Weights::Diagonal { diag } => (dst == src).then(|| diag[dst]),
        }
    }

    /// Adds `W x` to `out`, skipping zero entries of `x`.
    #[inline]
    pub fn accumulate(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Weights::Dense { matrix } => {
                for (j, &xj) in x.iter().enumerate() {
                    if xj == 0.0 {
                        continue;
                    }
                    for (r, o) in out.iter_mut().enumerate() {
                        *o += matrix.data[r * matrix.cols + j] * xj;
                    }
                }
            }
            Weights::Diagonal { diag } => {
                for ((o, &w), &xj) in out.iter_mut().zip(diag).zip(x) {
                    *o += w * xj;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// Source populations; their counts are summed before weighting.
    pub sources: Vec<usize>,
    pub weights: Weights,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynapseGroup {
    pub tau_syn: f64,
    pub projections: Vec<Projection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub name: String,
    pub kind: PopulationKind,
    pub size: usize,
    pub tau_mem: f64,
    pub threshold: f64,
    pub v_reset: f64,
    pub bias: f64,
    pub groups: Vec<SynapseGroup>,
}

impl Population {
    fn new(name: impl Into<String>, kind: PopulationKind, size: usize, lif: &LifParams) -> Self {
        Self {
            name: name.into(),
            kind,
            size,
            tau_mem: lif.tau_mem,
            threshold: lif.threshold,
            v_reset: lif.v_reset,
            bias: lif.bias,
            groups: Vec::new(),
        }
    }

    /// Float neuron parameters of this population under synapse group `g`.
    pub fn lif_params(&self, g: usize, dt: f64) -> LifParams {
        LifParams {
            tau_mem: self.tau_mem,
            tau_syn: self.groups[g].tau_syn,
            threshold: self.threshold,
            v_reset: self.v_reset,
            dt,
            bias: self.bias,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    pub version: u32,
    pub seed: u64,
    pub dt: f64,
    pub config: WaveSenseConfig,
    /// Sigma-delta step per EEG channel, fixed from the training split.
    pub encoder_steps: Vec<f64>,
    pub encoder_cap: Option<u32>,
    pub populations: Vec<Population>,
}

fn unit_uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dense(rng: &mut ChaCha8Rng, dst: usize, src: usize) -> Weights {
    Weights::Dense {
        matrix: Matrix {
            rows: dst,
            cols: src,
            data: unit_uniform(rng, dst * src),
        },
    }
}

fn diagonal(rng: &mut ChaCha8Rng, n: usize) -> Weights {
    Weights::Diagonal {
        diag: unit_uniform(rng, n),
    }
}

/// Incoming connections per neuron of a synapse group, counting every
/// summed source population.
pub fn group_fan_in(group: &SynapseGroup) -> usize {
    group
        .projections
        .iter()
        .map(|p| {
            p.sources.len()
                * match &p.weights {
                    Weights::Dense { matrix } => matrix.cols,
                    Weights::Diagonal { .. } => 1,
                }
        })
        .sum()
}

/// Initial weight bound of a group: `init_gain * (1 - a) / sqrt(fan_in)`
/// with `a` the synaptic decay per step, so that a single spike injects
/// the same total charge whatever the time constant.
pub fn init_bound(group: &SynapseGroup, dt: f64, init_gain: f64) -> f64 {
    init_gain * (1.0 - decay_factor(group.tau_syn, dt)) / (group_fan_in(group).max(1) as f64).sqrt()
}

/// Builds the default WaveSense wiring with uniform initial weights within
/// [`init_bound`].
pub fn build_network(config: &WaveSenseConfig, seed: u64) -> Result<Network> {
    config.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gain = config.init_gain;
    let lif = &config.lif;
    let c = config.neurons_per_block;
    let proj = |sources: Vec<usize>, weights| Projection { sources, weights };

    let mut pops = vec![Population::new(
        "input",
        PopulationKind::Input,
        config.n_input_channels,
        lif,
    )];

    let mut stem = Population::new("stem", PopulationKind::Spiking, c, lif);
    stem.groups.push(SynapseGroup {
        tau_syn: lif.tau_syn,
        projections: vec![proj(vec![0], dense(&mut rng, c, config.n_input_channels))],
    });
    pops.push(stem);
    let mut trunk = vec![1usize];
    let mut hidden_ids = Vec::new();

    for b in 0..config.n_blocks {
        let mut hidden = Population::new(format!("block{b}.hidden"), PopulationKind::Spiking, c, lif);
        for k in 0..2 {
            hidden.groups.push(SynapseGroup {
                tau_syn: config.dilation_taus[2 * b + k],
                projections: vec![proj(trunk.clone(), diagonal(&mut rng, c))],
            });
        }
        pops.push(hidden);
        let h = pops.len() - 1;
        hidden_ids.push(h);

        let mut res = Population::new(format!("block{b}.residual"), PopulationKind::Spiking, c, lif);
        res.groups.push(SynapseGroup {
            tau_syn: lif.tau_syn,
            projections: vec![proj(vec![h], dense(&mut rng, c, c))],
        });
        pops.push(res);
        trunk.push(pops.len() - 1);
    }

    let skip_dst = if config.readout_hidden > 0 {
        config.readout_hidden
    } else {
        config.n_classes
    };
    let mut skip_projections = vec![proj(trunk.clone(), dense(&mut rng, skip_dst, c))];
    for &h in &hidden_ids {
        skip_projections.push(proj(vec![h], dense(&mut rng, skip_dst, c)));
    }

    let mut out = Population::new("readout.out", PopulationKind::Readout, config.n_classes, lif);
    if config.readout_hidden > 0 {
        let mut rh = Population::new("readout.hidden", PopulationKind::Spiking, config.readout_hidden, lif);
        rh.groups.push(SynapseGroup {
            tau_syn: lif.tau_syn,
            projections: skip_projections,
        });
        pops.push(rh);
        let r = pops.len() - 1;
        out.groups.push(SynapseGroup {
            tau_syn: config.readout_tau_syn,
            projections: vec![proj(vec![r], dense(&mut rng, config.n_classes, config.readout_hidden))],
        });
    } else {
        out.groups.push(SynapseGroup {
            tau_syn: config.readout_tau_syn,
            projections: skip_projections,
        });
    }
    pops.push(out);
    let n_pops = pops.len();
    for (p, pop) in pops.iter_mut().enumerate() {
        for grp in &mut pop.groups {
            let bound = init_bound(grp, lif.dt, gain);
            for pr in &mut grp.projections {
                // output weights start non-negative so that every class
                // current rises above its resting zero and its peak carries
                // gradient from the first epoch
                let fold = p + 1 == n_pops;
                pr.weights
                    .as_mut_slice()
                    .iter_mut()
                    .for_each(|w| *w = if fold { w.abs() } else { *w } * bound);
            }
        }
    }

    let net = Network {
        version: FORMAT_VERSION,
        seed,
        dt: lif.dt,
        config: config.clone(),
        encoder_steps: Vec::new(),
        encoder_cap: Some(15),
        populations: pops,
    };
    net.check_structure()?;
    Ok(net)
}

impl Network {
    pub fn input_size(&self) -> usize {
        self.populations[0].size
    }

    pub fn output_index(&self) -> usize {
        self.populations.len() - 1
    }

    pub fn n_classes(&self) -> usize {
        self.populations[self.output_index()].size
    }

    pub fn weight_count(&self) -> usize {
        self.projections().map(|(_, _, p)| p.weights.len()).sum()
    }

    pub fn hidden_count(&self) -> usize {
        self.populations
            .iter()
            .filter(|p| p.kind == PopulationKind::Spiking)
            .map(|p| p.size)
            .sum()
    }

    /// Every projection with its destination population and synapse group,
    /// in a fixed order shared by gradients and optimizers.
    pub fn projections(&self) -> impl Iterator<Item = (usize, usize, &Projection)> {
        self.populations.iter().enumerate().flat_map(|(p, pop)| {
            pop.groups
                .iter()
                .enumerate()
                .flat_map(move |(g, grp)| grp.projections.iter().map(move |pr| (p, g, pr)))
        })
    }

    pub fn weight_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.populations
            .iter_mut()
            .flat_map(|pop| pop.groups.iter_mut())
            .flat_map(|g| g.projections.iter_mut())
            .map(|p| p.weights.as_mut_slice())
            .collect()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.populations.iter().position(|p| p.name == name)
    }

    /// Checks sizes, ordering and finiteness of a (possibly deserialized)
    /// network.
    pub fn check_structure(&self) -> Result<()> {
        let bad = |s: String| Err(WaveSenseError::Malformed(s));
        if self.populations.len() < 2 {
            return bad("need an input and a readout population".into());
        }
        if self.populations[0].kind != PopulationKind::Input || !self.populations[0].groups.is_empty() {
            return bad("population 0 must be a plain input".into());
        }
        if self.populations[self.output_index()].kind != PopulationKind::Readout {
            return bad("last population must be the readout".into());
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt {}", self.dt));
        }
        for (p, pop) in self.populations.iter().enumerate().skip(1) {
            if pop.kind == PopulationKind::Input {
                return bad(format!("{}: input population after position 0", pop.name));
            }
            if pop.groups.is_empty() {
                return bad(format!("{}: no synapse groups", pop.name));
            }
            if pop.kind == PopulationKind::Spiking && !(pop.threshold > pop.v_reset) {
                return bad(format!("{}: threshold must exceed reset", pop.name));
            }
            if !(pop.tau_mem >= self.dt) || !pop.bias.is_finite() {
                return bad(format!("{}: bad membrane parameters", pop.name));
            }
            for grp in &pop.groups {
                if !(grp.tau_syn >= self.dt) {
                    return bad(format!("{}: tau_syn {} below dt", pop.name, grp.tau_syn));
                }
                for pr in &grp.projections {
                    let Some(&first) = pr.sources.first() else {
                        return bad(format!("{}: projection without sources", pop.name));
                    };
                    if pr.sources.iter().any(|&s| s >= p) {
                        return bad(format!("{}: source not earlier in the DAG", pop.name));
                    }
                    let src = self.populations[first].size;
                    if pr.sources.iter().any(|&s| self.populations[s].size != src) {
                        return bad(format!("{}: summed sources differ in size", pop.name));
                    }
                    let ok = match &pr.weights {
                        Weights::Dense { matrix } => {
                            matrix.rows == pop.size && matrix.cols == src && matrix.data.len() == src * pop.size
                        }
                        Weights::Diagonal { diag } => diag.len() == pop.size && src == pop.size,
                    };
                    if !ok {
                        return bad(format!("{}: weight shape does not match populations", pop.name));
                    }
                    if pr.weights.as_slice().iter().any(|w| !w.is_finite()) {
                        return bad(format!("{}: non-finite weight", pop.name));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let net: Network = serde_json::from_str(text)?;
        if net.version != FORMAT_VERSION {
            return Err(WaveSenseError::Malformed(format!(
                "unsupported version {}",
                net.version
            )));
        }
        net.check_structure()?;
        Ok(net)
    }
}

/// Sum of the source spike counts of a projection.
#[inline]
pub(crate) fn gather_sources(sources: &[usize], spikes: &[Vec<u32>], x: &mut Vec<f64>) {
    let n = spikes[sources[0]].len();
    x.clear();
    x.resize(n, 0.0);
    for &s in sources {
        for (xj, &k) in x.iter_mut().zip(&spikes[s]) {
            *xj += k as f64;
        }
    }
}

/// Per-step float state of a whole network.
#[derive(Clone, Debug)]
pub struct FloatSim {
    mem_decay: Vec<f64>,
    syn_decay: Vec<Vec<f64>>,
    /// Synaptic currents, `[population][group][neuron]`.
    i_syn: Vec<Vec<Vec<f64>>>,
    v_mem: Vec<Vec<f64>>,
    /// Spike counts emitted in the latest step, `[population][neuron]`.
    spikes: Vec<Vec<u32>>,
    scratch: Vec<f64>,
}

impl FloatSim {
    pub fn new(net: &Network) -> Self {
        let pops = &net.populations;
        Self {
            mem_decay: pops.iter().map(|p| decay_factor(p.tau_mem, net.dt)).collect(),
            syn_decay: pops
                .iter()
                .map(|p| p.groups.iter().map(|g| decay_factor(g.tau_syn, net.dt)).collect())
                .collect(),
            i_syn: pops.iter().map(|p| vec![vec![0.0; p.size]; p.groups.len()]).collect(),
            v_mem: pops.iter().map(|p| vec![0.0; p.size]).collect(),
            spikes: pops.iter().map(|p| vec![0; p.size]).collect(),
            scratch: Vec::new(),
        }
    }

    /// Number of stored state values; fixed once the first step has run.
    pub fn state_len(&self) -> usize {
        let nested = |v: &Vec<Vec<f64>>| v.iter().map(Vec::len).sum::<usize>();
        self.mem_decay.len()
            + nested(&self.syn_decay)
            + self.i_syn.iter().map(nested).sum::<usize>()
            + nested(&self.v_mem)
            + self.spikes.iter().map(Vec::len).sum::<usize>()
            + self.scratch.len()
    }

    pub fn reset(&mut self) {
        self.i_syn.iter_mut().flatten().flatten().for_each(|v| *v = 0.0);
        self.v_mem.iter_mut().flatten().for_each(|v| *v = 0.0);
        self.spikes.iter_mut().flatten().for_each(|v| *v = 0);
    }

    /// Advances one timestep. When `u_pre` is given, the pre-reset membrane
    /// of every population is written into it (zeros for non-spiking ones).
    pub fn step(&mut self, net: &Network, input: &[u32], mut u_pre: Option<&mut [Vec<f64>]>) {
        self.spikes[0].copy_from_slice(input);
        for (p, pop) in net.populations.iter().enumerate().skip(1) {
            for (g, grp) in pop.groups.iter().enumerate() {
                let a = self.syn_decay[p][g];
                self.i_syn[p][g].iter_mut().for_each(|c| *c *= a);
                for pr in &grp.projections {
                    gather_sources(&pr.sources, &self.spikes, &mut self.scratch);
                    pr.weights.accumulate(&self.scratch, &mut self.i_syn[p][g]);
                }
            }
            if pop.kind != PopulationKind::Spiking {
                continue;
            }
            let beta = self.mem_decay[p];
            for n in 0..pop.size {
                let current: f64 = self.i_syn[p].iter().map(|g| g[n]).sum();
                let (u, v, k) =
                    membrane_step_float(self.v_mem[p][n], beta, current, pop.bias, pop.threshold, pop.v_reset);
                self.v_mem[p][n] = v;
                self.spikes[p][n] = k;
                if let Some(buf) = u_pre.as_deref_mut() {
                    buf[p][n] = u;
                }
            }
        }
    }

    pub fn spikes(&self, population: usize) -> &[u32] {
        &self.spikes[population]
    }

    /// Synaptic current of every neuron of `population`, summed over groups.
    pub fn current(&self, population: usize) -> Vec<f64> {
        let groups = &self.i_syn[population];
        (0..groups.first().map_or(0, Vec::len))
            .map(|n| groups.iter().map(|g| g[n]).sum())
            .collect()
    }
}

/// Result of running a network over one raster.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// Spike raster of every population (input included).
    pub spikes: Vec<SpikeRaster>,
    /// Readout currents, `n_classes x T`. Integer-valued for the fixed-point
    /// engine.
    pub currents: Vec<Vec<f64>>,
    pub spike_totals: Vec<u64>,
    /// Clamping events of the integer engine (0 in float mode).
    pub saturation_events: u64,
}

impl ForwardTrace {
    pub fn n_timesteps(&self) -> usize {
        self.currents.first().map_or(0, Vec::len)
    }

    pub fn peaks(&self) -> Vec<f64> {
        peak_currents(&self.currents, 0, self.n_timesteps())
    }
}

pub(crate) fn check_input(expected: usize, raster: &SpikeRaster) -> Result<()> {
    if raster.n_channels() != expected {
        return Err(WaveSenseError::ShapeMismatch {
            expected: format!("{expected} input channels"),
            got: format!("{} channels", raster.n_channels()),
        });
    }
    Ok(())
}

/// Collects per-step outputs into a [`ForwardTrace`].
pub(crate) struct TraceBuilder {
    spikes: Vec<Vec<Vec<u32>>>,
    currents: Vec<Vec<f64>>,
    dt: f64,
}

impl TraceBuilder {
    pub(crate) fn new(sizes: &[usize], n_classes: usize, t: usize, dt: f64) -> Self {
        Self {
            spikes: sizes.iter().map(|&n| vec![vec![0; t]; n]).collect(),
            currents: vec![vec![0.0; t]; n_classes],
            dt,
        }
    }

    pub(crate) fn record(&mut self, t: usize, spikes: &[Vec<u32>], currents: &[f64]) {
        for (dst, src) in self.spikes.iter_mut().zip(spikes) {
            for (row, &k) in dst.iter_mut().zip(src) {
                row[t] = k;
            }
        }
        for (row, &c) in self.currents.iter_mut().zip(currents) {
            row[t] = c;
        }
    }

    pub(crate) fn finish(self, saturation_events: u64) -> ForwardTrace {
        let spikes: Vec<SpikeRaster> = self.spikes.into_iter().map(|c| SpikeRaster::new(c, self.dt)).collect();
        ForwardTrace {
            spike_totals: spikes.iter().map(SpikeRaster::total).collect(),
            spikes,
            currents: self.currents,
            saturation_events,
        }
    }
}

/// Runs the float network over a raster from rest.
pub fn forward(net: &Network, input: &SpikeRaster) -> Result<ForwardTrace> {
    check_input(net.input_size(), input)?;
    let t_len = input.n_timesteps();
    let sizes: Vec<usize> = net.populations.iter().map(|p| p.size).collect();
    let out = net.output_index();
    let mut sim = FloatSim::new(net);
    let mut trace = TraceBuilder::new(&sizes, net.n_classes(), t_len, input.dt());
    let mut column = vec![0u32; net.input_size()];
    for t in 0..t_len {
        column.iter_mut().zip(input.column(t)).for_each(|(c, k)| *c = k);
        sim.step(net, &column, None);
        trace.record(t, &sim.spikes, &sim.current(out));
    }
    Ok(trace.finish(0))
}

/// Maximum of each class current over `[from, to)`.
pub fn peak_currents(currents: &[Vec<f64>], from: usize, to: usize) -> Vec<f64> {
    currents
        .iter()
        .map(|c| c[from..to].iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Class with the highest peak readout current.
pub fn readout_decision(trace: &ForwardTrace) -> usize {
    argmax(&trace.peaks())
}
