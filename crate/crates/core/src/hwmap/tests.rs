use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::encoding::SpikeRaster;
use crate::matrix::Matrix;
use crate::wavesense::{build_network, forward, WaveSenseConfig, FORMAT_VERSION};

const DT: f64 = 1.0 / 256.0;

fn lif_pop(name: &str, kind: PopulationKind, size: usize, threshold: f64, projections: Vec<Projection>) -> Population {
    Population {
        name: name.into(),
        kind,
        size,
        tau_mem: 8.0 * DT,
        threshold,
        v_reset: 0.0,
        bias: 0.0,
        groups: if projections.is_empty() {
            vec![]
        } else {
            vec![SynapseGroup {
                tau_syn: 8.0 * DT,
                projections,
            }]
        },
    }
}

fn dense_from(sources: Vec<usize>, m: Matrix) -> Projection {
    Projection {
        sources,
        weights: Weights::Dense { matrix: m },
    }
}

/// input -> a chain of spiking layers -> readout, all dense.
fn chain(n_in: usize, layers: &[Matrix], out: Matrix, threshold: f64) -> Network {
    let mut pops = vec![lif_pop("input", PopulationKind::Input, n_in, threshold, vec![])];
    for (k, m) in layers.iter().enumerate() {
        pops.push(lif_pop(
            &format!("h{k}"),
            PopulationKind::Spiking,
            m.rows,
            threshold,
            vec![dense_from(vec![k], m.clone())],
        ));
    }
    let last = pops.len() - 1;
    pops.push(lif_pop(
        "readout.out",
        PopulationKind::Readout,
        out.rows,
        threshold,
        vec![dense_from(vec![last], out)],
    ));
    let net = Network {
        version: FORMAT_VERSION,
        seed: 0,
        dt: DT,
        config: WaveSenseConfig::default(),
        encoder_steps: vec![],
        encoder_cap: Some(15),
        populations: pops,
    };
    net.check_structure().unwrap();
    net
}

fn filled(rows: usize, cols: usize, v: f64) -> Matrix {
    Matrix {
        rows,
        cols,
        data: vec![v; rows * cols],
    }
}

fn random_raster(rng: &mut ChaCha8Rng, channels: usize, t: usize, p: f64) -> SpikeRaster {
    let counts = (0..channels)
        .map(|_| {
            (0..t)
                .map(|_| {
                    if rng.random::<f64>() < p {
                        rng.random_range(1..5)
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect();
    SpikeRaster::new(counts, DT)
}

fn lively_default(seed: u64) -> Network {
    let mut net = build_network(&WaveSenseConfig::default(), seed).unwrap();
    for w in net.weight_slices_mut() {
        w.iter_mut().for_each(|x| *x *= 3.0);
    }
    net
}

fn quantized(net: &Network) -> QuantizedConfig {
    quantize(&extract_graph(net), ScaleMode::PerPopulation).0
}

fn bounds(cfg: &QuantizedConfig) -> Vec<Bound> {
    validate(cfg).into_iter().map(|v| v.bound).collect()
}

#[test]
fn toy_graph_keeps_weight_count() {
    let net = chain(2, &[filled(3, 2, 0.1)], filled(2, 3, 0.2), 0.6);
    let g = extract_graph(&net);
    assert_eq!(g.weight_count(), 6 + 6);
    assert_eq!(g.edges().len(), 12);
    assert_eq!(g.neurons.len(), 2 + 3 + 2);
}

#[test]
fn graph_network_round_trip() {
    let net = build_network(&WaveSenseConfig::default(), 4).unwrap();
    let g = extract_graph(&net);
    assert_eq!(g.to_network().unwrap(), net);
    assert_eq!(extract_graph(&g.to_network().unwrap()), g);
    assert_eq!(g.weight_count(), net.weight_count());
}

#[test]
fn graph_simulator_matches_forward() {
    let net = lively_default(2);
    let g = extract_graph(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = random_raster(&mut rng, 4, 800, 0.1);
    let a = forward(&net, &r).unwrap();
    let b = simulate_graph_float(&g, &r).unwrap();
    assert!(a.spike_totals[1..].iter().any(|&n| n > 0));
    assert_eq!(a.spikes, b.spikes);
    for (x, y) in a.currents.iter().flatten().zip(b.currents.iter().flatten()) {
        assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{x} vs {y}");
    }
}

#[test]
fn quantize_worked_example() {
    let net = chain(2, &[Matrix::from_rows(&[vec![0.5, -0.25]])], filled(1, 1, 1.0), 0.6);
    let (cfg, warnings) = quantize(&extract_graph(&net), ScaleMode::PerPopulation);
    assert!(warnings.is_empty());
    let h = &cfg.populations[1];
    assert_eq!(cfg.scale(h.first), 254.0);
    assert_eq!(cfg.blocks[0].weights, vec![127, -64]);
    assert_eq!(cfg.neurons[h.first].threshold, 152);
}

#[test]
fn zero_weights_keep_unit_scale() {
    let net = chain(2, &[filled(2, 2, 0.0)], filled(1, 2, 0.5), 0.6);
    let (cfg, warnings) = quantize(&extract_graph(&net), ScaleMode::PerPopulation);
    assert_eq!(cfg.blocks[0].weights, vec![0; 4]);
    assert_eq!(cfg.scale(cfg.populations[1].first), 1.0);
    assert_eq!(
        warnings,
        vec![QuantizeWarning::DegenerateWeights {
            population: "h0".into(),
            neuron: None
        }]
    );
    // threshold 0.6 at scale 1 rounds to 1, never 0
    assert_eq!(cfg.neurons[cfg.populations[1].first].threshold, 1);
}

#[test]
fn already_integral_weights_are_a_fixed_point() {
    let m = Matrix::from_rows(&[vec![127.0, -127.0, 5.0]]);
    let net = chain(3, &[m], filled(1, 1, 127.0), 127.0);
    let cfg = quantized(&net);
    assert_eq!(cfg.blocks[0].weights, vec![127, -127, 5]);
    assert_eq!(cfg.neurons[cfg.populations[1].first].threshold, 127);
}

#[test]
fn per_neuron_mode_scales_rows_separately() {
    let m = Matrix::from_rows(&[vec![0.5, -0.25], vec![0.1, 0.05]]);
    let net = chain(2, &[m], filled(1, 2, 0.3), 0.6);
    let (cfg, _) = quantize(&extract_graph(&net), ScaleMode::PerNeuron);
    assert_eq!(cfg.blocks[0].weights, vec![127, -64, 127, 64]);
    let first = cfg.populations[1].first;
    assert_eq!(cfg.neurons[first].threshold, 152);
    assert_eq!(cfg.neurons[first + 1].threshold, 762);
}

#[test]
fn default_network_is_deployable() {
    let net = build_network(&WaveSenseConfig::default(), 0).unwrap();
    let cfg = quantized(&net);
    assert_eq!(validate(&cfg), vec![]);
    assert_eq!(cfg.weight_count(), net.weight_count());
    assert_eq!(*cfg.hidden_fan_out().iter().max().unwrap(), 32);
}

#[test]
fn oversized_hidden_layer_rejected() {
    let net = chain(4, &[filled(1001, 4, 0.1)], filled(2, 1001, 0.1), 0.6);
    let v = validate(&quantized(&net));
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].bound, Bound::Hidden);
    assert!(v[0].to_string().starts_with("hidden > 1000"));
}

#[test]
fn too_many_inputs_and_outputs_rejected() {
    let net = chain(17, &[filled(4, 17, 0.1)], filled(2, 4, 0.1), 0.6);
    let v = validate(&quantized(&net));
    assert_eq!(v.iter().map(|x| x.bound).collect::<Vec<_>>(), vec![Bound::Inputs]);
    assert!(v[0].to_string().starts_with("input > 16"));
    let net = chain(4, &[filled(4, 4, 0.1)], filled(9, 4, 0.1), 0.6);
    assert_eq!(bounds(&quantized(&net)), vec![Bound::Outputs]);
}

#[test]
fn fan_out_33_rejected() {
    let net = chain(1, &[filled(1, 1, 0.5), filled(33, 1, 0.5)], filled(2, 33, 0.1), 0.6);
    let v = validate(&quantized(&net));
    assert_eq!(v.len(), 1);
    assert!(v[0].to_string().starts_with("fanout > 32"), "{}", v[0]);
    let net = chain(1, &[filled(1, 1, 0.5), filled(32, 1, 0.5)], filled(2, 32, 0.1), 0.6);
    assert!(validate(&quantized(&net)).is_empty());
}

#[test]
fn hand_edited_configs_rejected() {
    let base = quantized(&build_network(&WaveSenseConfig::default(), 0).unwrap());
    let mut c = base.clone();
    c.blocks[0].weights[0] = 128;
    assert_eq!(bounds(&c), vec![Bound::WeightRange]);
    let mut c = base.clone();
    c.neurons[5].threshold = 0;
    assert_eq!(bounds(&c), vec![Bound::Threshold]);
    let mut c = base.clone();
    c.neurons[5].dash_syn[0] = 16;
    assert_eq!(bounds(&c), vec![Bound::Dash]);
    let mut c = base.clone();
    c.max_spikes_per_step = 32;
    assert_eq!(bounds(&c), vec![Bound::SpikesPerStep]);
    let mut c = base.clone();
    c.encoder_cap = Some(40);
    assert_eq!(bounds(&c), vec![Bound::EncoderCap]);
    let mut c = base;
    c.blocks[0].sources = vec![3];
    assert!(bounds(&c).contains(&Bound::Structure));
}

#[test]
fn json_holds_integers_only() {
    let mut net = build_network(&WaveSenseConfig::default(), 0).unwrap();
    net.encoder_steps = vec![1.7, 2.3];
    let cfg = quantized(&net);
    let text = cfg.to_json().unwrap();
    fn walk(v: &serde_json::Value) {
        match v {
            serde_json::Value::Number(n) => assert!(n.is_i64() || n.is_u64(), "{n}"),
            serde_json::Value::Array(a) => a.iter().for_each(walk),
            serde_json::Value::Object(o) => o.values().for_each(walk),
            _ => {}
        }
    }
    walk(&serde_json::from_str(&text).unwrap());
    let back = QuantizedConfig::from_json(&text).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.encoder_steps(), vec![1.7, 2.3]);
}

#[test]
fn zero_raster_gives_zero_everything() {
    let cfg = quantized(&lively_default(1));
    let (trace, report) = simulate_quantized(&cfg, &SpikeRaster::zeros(4, 500, DT)).unwrap();
    assert!(trace.currents.iter().flatten().all(|&c| c == 0.0));
    assert_eq!(report.total_synops, 0);
}

#[test]
fn quantized_runs_are_bit_identical() {
    let cfg = quantized(&lively_default(1));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let r = random_raster(&mut rng, 4, 700, 0.15);
    let a = simulate_quantized(&cfg, &r).unwrap();
    let b = simulate_quantized(&cfg, &r).unwrap();
    assert!(a.1.total_synops > 0);
    assert_eq!(a, b);
}

#[test]
fn quantized_shape_checked() {
    let cfg = quantized(&lively_default(1));
    assert!(matches!(
        simulate_quantized(&cfg, &SpikeRaster::zeros(2, 5, DT)),
        Err(HwMapError::ShapeMismatch { .. })
    ));
}

#[test]
fn synops_of_one_spike() {
    let cfg = quantized(&chain(1, &[filled(16, 1, 0.5)], filled(2, 16, 0.5), 100.0));
    let mut r = SpikeRaster::zeros(1, 3, DT);
    r.counts[0][1] = 1;
    let (_, report) = simulate_quantized(&cfg, &r).unwrap();
    // the threshold is out of reach, so only the input spike travels
    assert_eq!(report.total_synops, 16);
    assert_eq!(
        count_synops(
            &simulate_quantized(&cfg, &SpikeRaster::zeros(1, 3, DT)).unwrap().0,
            &cfg.synop_fan_out()
        )
        .total_synops,
        0
    );
}

#[test]
fn doubling_input_never_lowers_synops_on_random_corpus() {
    let cfg = quantized(&lively_default(3));
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..40 {
        let r = random_raster(&mut rng, 4, 400, 0.1);
        let doubled = SpikeRaster::new(r.counts.iter().map(|c| c.iter().map(|k| 2 * k).collect()).collect(), DT);
        let a = simulate_quantized(&cfg, &r).unwrap().1.total_synops;
        let b = simulate_quantized(&cfg, &doubled).unwrap().1.total_synops;
        assert!(b >= a, "{a} -> {b}");
    }
}

#[test]
fn merged_report_averages_per_inference() {
    let a = EnergyReport {
        total_synops: 10,
        spikes_per_layer: vec![1, 2],
        synops_per_inference: 10,
        saturation_events: 0,
        inferences: 1,
    };
    let b = EnergyReport {
        total_synops: 20,
        spikes_per_layer: vec![3, 4],
        synops_per_inference: 20,
        saturation_events: 1,
        inferences: 1,
    };
    let m = EnergyReport::merge(&[a, b]);
    assert_eq!((m.total_synops, m.synops_per_inference, m.inferences), (30, 15, 2));
    assert_eq!(m.spikes_per_layer, vec![4, 6]);
}

proptest! {
    #[test]
    fn scaling_a_group_and_its_threshold_keeps_the_config(
        w in prop::collection::vec(-2.0f64..2.0, 6),
        threshold in 0.1f64..3.0,
        c in 0.05f64..20.0,
    ) {
        prop_assume!(w.iter().any(|x| x.abs() > 1e-3));
        let m = Matrix { rows: 2, cols: 3, data: w.clone() };
        let scaled = Matrix { rows: 2, cols: 3, data: w.iter().map(|x| x * c).collect() };
        let a = quantized(&chain(3, &[m], filled(1, 2, 0.5), threshold));
        let b = quantized(&chain(3, &[scaled], filled(1, 2, 0.5), threshold * c));
        // identical up to rounding of values that sit on a .5 boundary
        for (x, y) in a.blocks[0].weights.iter().zip(&b.blocks[0].weights) {
            prop_assert!((x - y).abs() <= 1);
        }
        let first = a.populations[1].first;
        prop_assert!((a.neurons[first].threshold - b.neurons[first].threshold).abs() <= 1);
        let exact = a.blocks[0].weights.iter().zip(&b.blocks[0].weights).filter(|(x, y)| x == y).count();
        prop_assert!(exact >= 5);
    }

    #[test]
    fn quantized_thresholds_are_at_least_one(threshold in 1e-6f64..5.0, w in 0.001f64..10.0) {
        let cfg = quantized(&chain(1, &[filled(2, 1, w)], filled(1, 2, w), threshold));
        let first = cfg.populations[1].first;
        prop_assert!(cfg.neurons[first].threshold >= 1);
    }

    #[test]
    fn validated_configs_always_execute(
        seed in 0u64..1000,
        edits in prop::collection::vec((0usize..6, 0usize..4000, -300i32..300), 0..4),
    ) {
        let mut cfg = quantized(&build_network(&WaveSenseConfig { n_blocks: 1, dilation_taus: vec![0.01, 0.02], ..WaveSenseConfig::default() }, seed).unwrap());
        for (kind, at, val) in edits {
            let nb = cfg.blocks.len();
            let nn = cfg.neurons.len();
            match kind {
                0 => { let b = &mut cfg.blocks[at % nb]; let n = b.weights.len(); b.weights[at % n] = val; }
                1 => cfg.neurons[at % nn].threshold = val,
                2 => cfg.neurons[at % nn].dash_mem = (val.unsigned_abs() % 20) as u8,
                3 => { let b = &mut cfg.blocks[at % nb]; b.sources = vec![at % 7]; }
                4 => { let b = &mut cfg.blocks[at % nb]; b.rows = b.rows.wrapping_add(val as usize % 3); }
                _ => { let p = at % cfg.populations.len(); cfg.populations[p].size += 1; }
            }
        }
        if validate(&cfg).is_empty() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_raster(&mut rng, cfg.n_inputs, 50, 0.2);
            prop_assert!(simulate_quantized(&cfg, &r).is_ok());
        }
    }
}
