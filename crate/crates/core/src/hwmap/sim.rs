use serde::{Deserialize, Serialize};

use super::{structure_violations, HwMapError, NeuronGraph, QLayout, QuantizedConfig, Result};
use crate::encoding::SpikeRaster;
use crate::lif::{decay_factor, membrane_step_fixed, membrane_step_float, synapse_step_fixed, SaturationTally};
use crate::wavesense::{ForwardTrace, PopulationKind, TraceBuilder};

/// Integer execution state of a [`QuantizedConfig`].
#[derive(Clone, Debug)]
pub struct FixedSim {
    v_mem: Vec<i16>,
    /// `[neuron][synapse]`
    i_syn: Vec<Vec<i16>>,
    acc: Vec<Vec<i64>>,
    spikes: Vec<u32>,
    x: Vec<i64>,
    /// Block indices grouped by destination population.
    blocks_of: Vec<Vec<usize>>,
    pub tally: SaturationTally,
}

impl FixedSim {
    pub fn new(cfg: &QuantizedConfig) -> Self {
        let mut blocks_of = vec![Vec::new(); cfg.populations.len()];
        for (k, b) in cfg.blocks.iter().enumerate() {
            blocks_of[b.population].push(k);
        }
        Self {
            v_mem: vec![0; cfg.neurons.len()],
            i_syn: cfg.neurons.iter().map(|q| vec![0; q.dash_syn.len()]).collect(),
            acc: cfg.neurons.iter().map(|q| vec![0; q.dash_syn.len()]).collect(),
            spikes: vec![0; cfg.neurons.len()],
            x: Vec::new(),
            blocks_of,
            tally: SaturationTally::default(),
        }
    }

    /// Number of stored state values; fixed once the first step has run.
    pub fn state_len(&self) -> usize {
        self.v_mem.len()
            + self.i_syn.iter().map(Vec::len).sum::<usize>()
            + self.acc.iter().map(Vec::len).sum::<usize>()
            + self.spikes.len()
            + self.x.len()
    }

    pub fn reset(&mut self) {
        self.v_mem.iter_mut().for_each(|v| *v = 0);
        self.i_syn.iter_mut().flatten().for_each(|v| *v = 0);
        self.spikes.iter_mut().for_each(|v| *v = 0);
        self.tally = SaturationTally::default();
    }

    pub fn step(&mut self, cfg: &QuantizedConfig, input: &[u32]) {
        self.spikes[..cfg.n_inputs].copy_from_slice(input);
        for (p, pop) in cfg.populations.iter().enumerate().skip(1) {
            let ids = pop.first..pop.first + pop.size;
            for a in &mut self.acc[ids.clone()] {
                a.iter_mut().for_each(|v| *v = 0);
            }
            for &k in &self.blocks_of[p] {
                let b = &cfg.blocks[k];
                let src_size = cfg.populations[b.sources[0]].size;
                self.x.clear();
                self.x.resize(src_size, 0);
                for &s in &b.sources {
                    let first = cfg.populations[s].first;
                    for (j, xj) in self.x.iter_mut().enumerate() {
                        *xj += self.spikes[first + j] as i64;
                    }
                }
                for r in 0..b.rows {
                    let sum: i64 = match b.layout {
                        QLayout::Dense => b.weights[r * b.cols..(r + 1) * b.cols]
                            .iter()
                            .zip(&self.x)
                            .map(|(&w, &x)| w as i64 * x)
                            .sum(),
                        QLayout::Diagonal => b.weights[r] as i64 * self.x[r],
                    };
                    self.acc[pop.first + r][b.synapse] += sum;
                }
            }
            for n in ids {
                let q = &cfg.neurons[n];
                let mut current = 0i64;
                for (g, &dash) in q.dash_syn.iter().enumerate() {
                    let i = synapse_step_fixed(self.i_syn[n][g], dash, self.acc[n][g], &mut self.tally);
                    self.i_syn[n][g] = i;
                    current += i as i64;
                }
                if pop.kind == PopulationKind::Spiking {
                    let (v, k) = membrane_step_fixed(
                        self.v_mem[n],
                        q.dash_mem,
                        current,
                        q.bias as i64,
                        q.threshold,
                        &mut self.tally,
                    );
                    self.v_mem[n] = v;
                    self.spikes[n] = k.min(cfg.max_spikes_per_step);
                }
            }
        }
    }

    pub fn spikes(&self) -> &[u32] {
        &self.spikes
    }

    /// Summed synaptic currents of the readout, in integer units.
    pub fn readout(&self, cfg: &QuantizedConfig) -> Vec<f64> {
        let out = &cfg.populations[cfg.output_index()];
        (out.first..out.first + out.size)
            .map(|n| self.i_syn[n].iter().map(|&i| i as i64).sum::<i64>() as f64)
            .collect()
    }
}

fn per_population(spikes: &[u32], spans: impl Iterator<Item = (usize, usize)>) -> Vec<Vec<u32>> {
    spans
        .map(|(first, size)| spikes[first..first + size].to_vec())
        .collect()
}

/// Runs the integer engine over a raster from rest.
pub fn simulate_quantized(cfg: &QuantizedConfig, input: &SpikeRaster) -> Result<(ForwardTrace, EnergyReport)> {
    let problems = structure_violations(cfg);
    if !problems.is_empty() {
        return Err(HwMapError::Malformed(problems.join("; ")));
    }
    if input.n_channels() != cfg.n_inputs {
        return Err(HwMapError::ShapeMismatch {
            expected: format!("{} input channels", cfg.n_inputs),
            got: format!("{} channels", input.n_channels()),
        });
    }
    let sizes: Vec<usize> = cfg.populations.iter().map(|p| p.size).collect();
    let mut builder = TraceBuilder::new(&sizes, cfg.n_outputs, input.n_timesteps(), input.dt());
    let mut sim = FixedSim::new(cfg);
    let mut column = vec![0u32; cfg.n_inputs];
    for t in 0..input.n_timesteps() {
        column.iter_mut().zip(input.column(t)).for_each(|(c, k)| *c = k);
        sim.step(cfg, &column);
        let pops = per_population(&sim.spikes, cfg.populations.iter().map(|p| (p.first, p.size)));
        builder.record(t, &pops, &sim.readout(cfg));
    }
    let trace = builder.finish(sim.tally.events);
    let report = count_synops(&trace, &cfg.synop_fan_out());
    Ok((trace, report))
}

/// Edge-by-edge float simulation of a graph. Independent of the
/// population-level float engine; agrees with it up to summation order.
pub fn simulate_graph_float(graph: &NeuronGraph, input: &SpikeRaster) -> Result<ForwardTrace> {
    if input.n_channels() != graph.n_inputs() {
        return Err(HwMapError::ShapeMismatch {
            expected: format!("{} input channels", graph.n_inputs()),
            got: format!("{} channels", input.n_channels()),
        });
    }
    let n = graph.neurons.len();
    let mut incoming: Vec<Vec<Vec<(usize, f64)>>> = graph
        .neurons
        .iter()
        .map(|nr| vec![Vec::new(); nr.tau_syn.len()])
        .collect();
    for e in graph.edges() {
        incoming[e.dst][e.synapse].push((e.src, e.weight));
    }
    let syn_decay: Vec<Vec<f64>> = graph
        .neurons
        .iter()
        .map(|nr| nr.tau_syn.iter().map(|&t| decay_factor(t, graph.dt)).collect())
        .collect();
    let mem_decay: Vec<f64> = graph
        .neurons
        .iter()
        .map(|nr| decay_factor(nr.tau_mem, graph.dt))
        .collect();
    let mut i_syn: Vec<Vec<f64>> = syn_decay.iter().map(|d| vec![0.0; d.len()]).collect();
    let mut v_mem = vec![0.0; n];
    let mut spikes = vec![0u32; n];
    let out = graph.populations.last().expect("graph has populations");
    let sizes: Vec<usize> = graph.populations.iter().map(|p| p.size).collect();
    let mut builder = TraceBuilder::new(&sizes, out.size, input.n_timesteps(), input.dt());

    for t in 0..input.n_timesteps() {
        for (s, k) in spikes.iter_mut().zip(input.column(t)) {
            *s = k;
        }
        for (id, nr) in graph.neurons.iter().enumerate() {
            if nr.kind == PopulationKind::Input {
                continue;
            }
            for (g, edges) in incoming[id].iter().enumerate() {
                let drive: f64 = edges.iter().map(|&(src, w)| w * spikes[src] as f64).sum();
                i_syn[id][g] = i_syn[id][g] * syn_decay[id][g] + drive;
            }
            if nr.kind == PopulationKind::Spiking {
                let current: f64 = i_syn[id].iter().sum();
                let (_, v, k) =
                    membrane_step_float(v_mem[id], mem_decay[id], current, nr.bias, nr.threshold, nr.v_reset);
                v_mem[id] = v;
                spikes[id] = k;
            }
        }
        let pops = per_population(&spikes, graph.populations.iter().map(|p| (p.first, p.size)));
        let currents: Vec<f64> = (out.first..out.first + out.size)
            .map(|id| i_syn[id].iter().sum())
            .collect();
        builder.record(t, &pops, &currents);
    }
    Ok(builder.finish(0))
}

/// Synaptic-operation energy proxy.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub total_synops: u64,
    pub spikes_per_layer: Vec<u64>,
    pub synops_per_inference: u64,
    pub saturation_events: u64,
    pub inferences: u64,
}

impl EnergyReport {
    /// Sums several single-inference reports; the per-inference figure
    /// becomes the rounded mean.
    pub fn merge(reports: &[EnergyReport]) -> EnergyReport {
        let mut out = EnergyReport::default();
        for r in reports {
            out.total_synops += r.total_synops;
            out.saturation_events += r.saturation_events;
            out.inferences += r.inferences;
            if out.spikes_per_layer.len() < r.spikes_per_layer.len() {
                out.spikes_per_layer.resize(r.spikes_per_layer.len(), 0);
            }
            for (a, b) in out.spikes_per_layer.iter_mut().zip(&r.spikes_per_layer) {
                *a += b;
            }
        }
        if let Some(mean) = (out.total_synops + out.inferences / 2).checked_div(out.inferences) {
            out.synops_per_inference = mean;
        }
        out
    }
}

/// `synops = sum over neurons of spikes x fan-out`. `fan_out` is indexed by
/// neuron id, i.e. the rows of `trace.spikes` laid end to end.
pub fn count_synops(trace: &ForwardTrace, fan_out: &[usize]) -> EnergyReport {
    let mut total = 0u64;
    let mut id = 0;
    for raster in &trace.spikes {
        for row in &raster.counts {
            let spikes: u64 = row.iter().map(|&k| k as u64).sum();
            total += spikes * fan_out.get(id).copied().unwrap_or(0) as u64;
            id += 1;
        }
    }
    EnergyReport {
        total_synops: total,
        spikes_per_layer: trace.spike_totals.clone(),
        synops_per_inference: total,
        saturation_events: trace.saturation_events,
        inferences: 1,
    }
}
