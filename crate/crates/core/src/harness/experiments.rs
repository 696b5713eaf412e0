//! Experiment runners behind `bansim <experiment>`.
//!
//! Each runner reads its section of the scenario, derives every random
//! stream from the scenario seed and returns tables and plots. Rows come
//! out in parameter order whatever the execution order.

use std::thread;

use super::svg::{emit_svg, PlotSpec};
use super::table::{Cell, Column, ResultTable};
use super::{ExperimentOutput, ScenarioConfig, Section};
use crate::channels::{
    body_clusters, ground_clusters, indoor_clusters, inter_cluster_slope, intra_cluster_slope, ref_clusters, render,
    BanModelParams, ClusterTaps, GbhdsParams, PathLossParams, gbhds_doa_histogram,
};
use crate::equalize::{
    dfe_detect, dfe_train, dispersion_constant, linear_detect, linear_mud_detect, matched_filter, run_blind,
    synth_multiuser, train_wiener, write_taps_csv, CmaEqualizer, CmaVariant, MultiuserScene, REFERENCE_CHANNEL,
};
use crate::error::{Error, Result};
use crate::linkadapt::{simulate_la, LaNode, LaSimConfig, LaThresholds, DEFAULT_PF_WINDOW};
use crate::rng::Seed;
use crate::sigproc::{add_awgn, bit_errors, demodulate, modulate, BitStream, Modulation, SymbolStream};
use crate::zigbee::{broadcast_compare, forward_set_study, random_topology, self_pruning_broadcast, Topology};
use crate::C64;

fn to_complex(v: &[f64]) -> Vec<C64> {
    v.iter().map(|&x| C64::new(x, 0.0)).collect()
}

fn convolve(a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn positive(section: &Section, key: &str, value: usize) -> Result<usize> {
    if value == 0 {
        return Err(Error::InvalidParameter(format!("[{}] {key} must be >= 1", section.name)));
    }
    Ok(value)
}

/// Bit-error count for one Eb/N0 point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerPoint {
    pub ebn0_db: f64,
    pub bits: u64,
    pub errors: u64,
    pub symbols: u64,
}

impl BerPoint {
    pub fn ber(&self) -> f64 {
        self.errors as f64 / self.bits.max(1) as f64
    }
}

/// Modulate, add noise, demodulate in chunks of `chunk_bits` until
/// `min_errors` errors (when nonzero) or `max_bits` bits.
pub fn simulate_ber(
    modulation: Modulation,
    ebn0_db: f64,
    max_bits: usize,
    min_errors: usize,
    chunk_bits: usize,
    seed: Seed,
) -> Result<BerPoint> {
    let k = modulation.bits_per_symbol();
    if max_bits < k {
        return Err(Error::InvalidParameter(format!("bit budget {max_bits} is below one symbol")));
    }
    let scheme = modulation.scheme();
    let chunk = (chunk_bits.max(k) / k) * k;
    let (mut bits, mut errors, mut c) = (0usize, 0usize, 0u64);
    while bits < max_bits && !(min_errors > 0 && errors >= min_errors) {
        let n = chunk.min((max_bits - bits) / k * k);
        if n == 0 {
            break;
        }
        let tx = BitStream::random(n, seed.derive(2 * c));
        let rx = add_awgn(&modulate(&tx, &scheme)?, ebn0_db, &scheme, seed.derive(2 * c + 1))?;
        errors += bit_errors(&tx, &demodulate(&rx, &scheme))?;
        bits += n;
        c += 1;
    }
    Ok(BerPoint { ebn0_db, bits: bits as u64, errors: errors as u64, symbols: (bits / k) as u64 })
}

pub fn run_ber_sweep(scenario: &ScenarioConfig) -> Result<ExperimentOutput> {
    let p = scenario.params();
    let modulation: Modulation = p.get_or("scheme", Modulation::Qam16)?;
    let mut grid: Vec<f64> = p.get_list("ebn0_db")?;
    if grid.is_empty() {
        return Err(Error::InvalidParameter("[ber_sweep] ebn0_db grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|v| v.is_nan() || **v == f64::NEG_INFINITY) {
        return Err(Error::InvalidParameter(format!("[ber_sweep] invalid Eb/N0 {bad}")));
    }
    let max_bits = positive(&p, "max_bits", p.get_or("max_bits", 1_000_000usize)?)?;
    let min_errors = p.get_or("min_errors", 100usize)?;
    let chunk_bits = positive(&p, "chunk_bits", p.get_or("chunk_bits", 100_000usize)?)?;
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let seed = scenario.seed;
    let points: Vec<Result<BerPoint>> = thread::scope(|s| {
        let handles: Vec<_> = grid
            .iter()
            .map(|&e| {
                s.spawn(move || simulate_ber(modulation, e, max_bits, min_errors, chunk_bits, seed.derive(e.to_bits())))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("BER worker panicked")).collect()
    });

    let mut table = ResultTable::new(
        "ber_sweep",
        vec![
            Column::fixed("ebn0_db", 2),
            Column::sci("ber", 6),
            Column::fixed("symbols", 0),
            Column::fixed("bits", 0),
            Column::fixed("errors", 0),
        ],
        scenario.provenance(),
    );
    for point in points {
        let pt = point?;
        table.push(vec![pt.ebn0_db.into(), pt.ber().into(), pt.symbols.into(), pt.bits.into(), pt.errors.into()])?;
    }
    let plotted = table.filtered(|r| {
        matches!((&r[0], &r[1]), (Cell::Float(e), Cell::Float(b)) if e.is_finite() && *b > 0.0)
    });
    let title = format!("BER, {} over AWGN", modulation.name().to_uppercase());
    let svg = emit_svg(&plotted, &PlotSpec::line(&title, "ebn0_db", &["ber"]).log_y())?;
    Ok(ExperimentOutput { tables: vec![table], plots: vec![("ber_sweep".into(), svg)], files: Vec::new() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ChannelModel {
    Outdoor,
    Indoor,
    Reflection,
}

/// Per-draw measurements of one channel realisation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraw {
    pub clusters: usize,
    /// Mean regressed intra-cluster slope, dB/ns.
    pub intra_slope: f64,
    /// Regressed slope across reflection-cluster peaks, dB/ns (NaN when
    /// there is no reflection component).
    pub inter_slope: f64,
    pub energy: f64,
    pub taps: Vec<C64>,
}

fn channel_draw(model: ChannelModel, params: &BanModelParams, num_clusters: usize, seed: Seed) -> Result<ChannelDraw> {
    let mut clusters: Vec<ClusterTaps> = match model {
        ChannelModel::Outdoor => {
            let mut c = body_clusters(params, seed)?;
            c.extend(ground_clusters(params, seed)?);
            c
        }
        ChannelModel::Indoor => indoor_clusters(params, num_clusters, seed)?,
        ChannelModel::Reflection => ref_clusters(params, num_clusters, seed)?,
    };
    let inter_slope = match model {
        ChannelModel::Outdoor => None,
        ChannelModel::Indoor => inter_cluster_slope(&ref_clusters(params, num_clusters, seed)?, params.delta_ns),
        ChannelModel::Reflection => inter_cluster_slope(&clusters, params.delta_ns),
    }
    .unwrap_or(f64::NAN);
    let slopes: Vec<f64> = clusters.iter().filter_map(|c| intra_cluster_slope(c, params.delta_ns)).collect();
    let intra_slope = if slopes.is_empty() { f64::NAN } else { slopes.iter().sum::<f64>() / slopes.len() as f64 };
    clusters.sort_by_key(|c| c.start_bin);
    let cir = render(&clusters, params.delta_ns);
    Ok(ChannelDraw { clusters: cir.num_clusters(), intra_slope, inter_slope, energy: cir.energy(), taps: cir.taps })
}

pub fn run_channel_stats(scenario: &ScenarioConfig) -> Result<ExperimentOutput> {
    let p = scenario.params();
    let model = match p.get_or("model", "outdoor_ban".to_string())?.as_str() {
        "outdoor_ban" => ChannelModel::Outdoor,
        "indoor_ban" => ChannelModel::Indoor,
        "ref" => ChannelModel::Reflection,
        other => {
            return Err(Error::InvalidParameter(format!(
                "[channel_stats] model must be outdoor_ban, indoor_ban or ref, got `{other}`"
            )))
        }
    };
    let draws = positive(&p, "draws", p.get_or("draws", 1000usize)?)?;
    let num_clusters = p.get_or("num_clusters", 4usize)?;
    if model != ChannelModel::Outdoor && num_clusters == 0 {
        return Err(Error::InvalidParameter("[channel_stats] num_clusters must be >= 1".into()));
    }
    let params = BanModelParams::from_section(&p)?;

    let mut table = ResultTable::new(
        "channel_stats",
        vec![
            Column::fixed("draw", 0),
            Column::fixed("clusters", 0),
            Column::fixed("intra_slope_db_per_ns", 6),
            Column::fixed("inter_slope_db_per_ns", 6),
            Column::fixed("energy", 9),
        ],
        scenario.provenance(),
    );
    let mut power: Vec<f64> = Vec::new();
    for d in 0..draws {
        let draw = channel_draw(model, &params, num_clusters, scenario.seed.derive(d as u64))?;
        if power.len() < draw.taps.len() {
            power.resize(draw.taps.len(), 0.0);
        }
        for (acc, t) in power.iter_mut().zip(&draw.taps) {
            *acc += t.norm_sqr() / draws as f64;
        }
        table.push(vec![
            d.into(),
            draw.clusters.into(),
            draw.intra_slope.into(),
            draw.inter_slope.into(),
            draw.energy.into(),
        ])?;
    }

    let mut pdp = ResultTable::new(
        "channel_pdp",
        vec![Column::fixed("delay_ns", 3), Column::fixed("power_db", 4)],
        scenario.provenance(),
    );
    for (k, &pw) in power.iter().enumerate() {
        pdp.push(vec![(k as f64 * params.delta_ns).into(), (10.0 * pw.log10()).into()])?;
    }
    let svg = emit_svg(&pdp, &PlotSpec::line("Mean power delay profile", "delay_ns", &["power_db"]))?;
    Ok(ExperimentOutput { tables: vec![table, pdp], plots: vec![("channel_pdp".into(), svg)], files: Vec::new() })
}

pub fn run_doa_hist(scenario: &ScenarioConfig) -> Result<ExperimentOutput> {
    let p = scenario.params();
    let params = GbhdsParams::from_section(&p)?;
    let count = positive(&p, "count", p.get_or("count", 100_000usize)?)?;
    let bins = positive(&p, "bins", p.get_or("bins", 41usize)?)?;
    let hist = gbhds_doa_histogram(&params, count, bins, scenario.seed)?;
    let mut table = ResultTable::new(
        "doa_hist",
        vec![Column::fixed("bin", 0), Column::fixed("doa_deg", 4), Column::fixed("mass", 6), Column::fixed("count", 0)],
        scenario.provenance(),
    );
    for b in 0..bins {
        table.push(vec![b.into(), hist.center(b).to_degrees().into(), hist.mass[b].into(), hist.counts[b].into()])?;
    }
    let svg = emit_svg(&table, &PlotSpec::line("DOA at the base station", "doa_deg", &["mass"]))?;
    Ok(ExperimentOutput { tables: vec![table], plots: vec![("doa_hist".into(), svg)], files: Vec::new() })
}

pub fn run_cma_convergence(scenario: &ScenarioConfig) -> Result<ExperimentOutput> {
    let p = scenario.params();
    let schemes: Vec<Modulation> = p.get_list_or("scheme", vec![Modulation::Qam8, Modulation::Qam16])?;
    let steps: Vec<f64> = p.get_list_or("step", vec![0.0006, 0.0003])?;
    if schemes.is_empty() || schemes.len() != steps.len() {
        return Err(Error::InvalidParameter("[cma_convergence] scheme and step lists must pair up".into()));
    }
    if let Some(s) = schemes.iter().find(|s| !matches!(s, Modulation::Qam8 | Modulation::Qam16)) {
        return Err(Error::InvalidParameter(format!("[cma_convergence] scheme must be qam8 or qam16, got {s}")));
    }
    let channel = to_complex(&p.get_list_or("channel", REFERENCE_CHANNEL.to_vec())?);
    if channel.is_empty() {
        return Err(Error::InvalidParameter("[cma_convergence] channel is empty".into()));
    }
    let nf = p.get_or("taps", 11usize)?;
    let iterations = positive(&p, "iterations", p.get_or("iterations", 20_000usize)?)?;
    let window = p.get_or("window", 500usize)?;
    let ebn0_db = p.get_or("ebn0_db", 30.0f64)?;
    let variant: CmaVariant = p.get_or("variant", CmaVariant::Cma)?;

    let mut columns = vec![Column::fixed("iteration", 0)];
    let mut summary = ResultTable::new(
        "cma_summary",
        vec![
            Column::fixed("scheme", 0),
            Column::fixed("step", 6),
            Column::fixed("initial_mse", 6),
            Column::fixed("final_mse", 6),
            Column::fixed("improvement_db", 3),
            Column::fixed("delay", 0),
        ],
        scenario.provenance(),
    );
    let mut traces = Vec::with_capacity(schemes.len());
    let mut files = Vec::new();
    for (i, (&scheme, &step)) in schemes.iter().zip(&steps).enumerate() {
        let run_seed = scenario.seed.derive(i as u64);
        let symbols = SymbolStream::random(iterations + nf + channel.len(), scheme, run_seed.derive(0));
        let scene = MultiuserScene {
            symbols: vec![symbols.clone()],
            templates: vec![channel.clone()],
            samples_per_symbol: 1,
            noise_ebn0_db: ebn0_db,
        };
        let received = synth_multiuser(&scene, run_seed.derive(1))?.received;
        let eq = CmaEqualizer::center_spike(nf, step, dispersion_constant(&scheme.scheme()), variant)?;
        let run = run_blind(&received, eq, iterations, window, run_seed.derive(2), Some(&symbols.samples))?;
        let label = format!("{}_mu{}", scheme.name(), step);
        columns.push(Column::sci(&format!("mse_{label}"), 6));
        summary.push(vec![
            scheme.name().into(),
            step.into(),
            run.initial_mse().into(),
            run.final_mse().into(),
            run.improvement_db().into(),
            run.delay.unwrap_or(0).into(),
        ])?;
        let mut taps = Vec::new();
        write_taps_csv(&run.equalizer.taps, &mut taps)?;
        files.push((format!("cma_taps_{label}.csv"), String::from_utf8(taps).expect("utf-8")));
        traces.push(run.mse_trace);
    }
    let names: Vec<String> = columns[1..].iter().map(|c| c.name.clone()).collect();
    let mut trace_table = ResultTable::new("cma_mse", columns, scenario.provenance());
    for it in 0..traces[0].len() {
        let mut row: Vec<Cell> = vec![it.into()];
        row.extend(traces.iter().map(|t| Cell::Float(t[it])));
        trace_table.push(row)?;
    }
    let plotted = trace_table.filtered(|r| r[1..].iter().all(|c| c.as_f64().is_some_and(|v| v > 0.0)));
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let svg = emit_svg(&plotted, &PlotSpec::line("Blind equalisation, windowed MSE", "iteration", &refs).log_y())?;
    Ok(ExperimentOutput { tables: vec![trace_table, summary], plots: vec![("cma_mse".into(), svg)], files })
}

/// SER and MSE of the three receivers on one seeded two-user scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverScore {
    pub receiver: &'static str,
    pub ser: f64,
    pub mse: f64,
    pub symbol_errors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MudScenario {
    pub scheme: Modulation,
    pub symbols: usize,
    pub training: usize,
    pub ebn0_db: f64,
    pub samples_per_symbol: usize,
    pub templates: Vec<Vec<C64>>,
    /// Sample-rate channel applied to every user's template.
    pub isi: Vec<C64>,
    /// Feedforward length in samples; defaults to the composite template.
    pub feedforward: Option<usize>,
    pub feedback: usize,
}

impl MudScenario {
    pub fn from_section(p: &Section) -> Result<Self> {
        let t0 = to_complex(&p.get_list_or("template0", vec![0.5, 0.5, 0.5, 0.5])?);
        let t1 = to_complex(&p.get_list_or("template1", vec![0.5, 0.5, 0.5, -0.5])?);
        let isi = to_complex(&p.get_list_or("isi", vec![1.0])?);
        if isi.is_empty() {
            return Err(Error::InvalidParameter("[mud_compare] isi is empty".into()));
        }
        Ok(Self {
            scheme: p.get_or("scheme", Modulation::Bpsk)?,
            symbols: positive(p, "symbols", p.get_or("symbols", 100_000usize)?)?,
            training: p.get_or("training", 2_000usize)?,
            ebn0_db: p.get_or("ebn0_db", 15.0)?,
            samples_per_symbol: positive(p, "samples_per_symbol", p.get_or("samples_per_symbol", 4usize)?)?,
            templates: vec![t0, t1],
            isi,
            feedforward: if p.contains("feedforward") { Some(p.get("feedforward")?) } else { None },
            feedback: p.get_or("feedback", 1usize)?,
        })
    }

    /// Receivers sorted by SER, then MSE, then name.
    pub fn run(&self, seed: Seed) -> Result<Vec<ReceiverScore>> {
        if self.training > self.symbols {
            return Err(Error::InvalidParameter("training exceeds the symbol count".into()));
        }
        let templates: Vec<Vec<C64>> = self.templates.iter().map(|t| convolve(t, &self.isi)).collect();
        let scene = MultiuserScene {
            symbols: (0..templates.len())
                .map(|u| SymbolStream::random(self.symbols, self.scheme, seed.derive(u as u64)))
                .collect(),
            templates,
            samples_per_symbol: self.samples_per_symbol,
            noise_ebn0_db: self.ebn0_db,
        };
        let sig = synth_multiuser(&scene, seed.derive(100))?;
        let scheme = self.scheme.scheme();
        let truth = &scene.symbols[0].samples;
        let n = self.symbols;
        let nf = self.feedforward.unwrap_or(scene.templates[0].len());
        let framing = scene.framing(nf);

        let (mf, mf_frame) = matched_filter(&scene.templates[0], self.samples_per_symbol);
        let matched = linear_detect(&sig.received, &mf, mf_frame, &scheme, n, Some(truth))?;
        let wiener = train_wiener(&sig.received, &truth[..self.training], framing)?;
        let linear = linear_mud_detect(&sig.received, &wiener, &scheme, n, Some(truth))?;
        let training = SymbolStream { samples: truth[..self.training].to_vec(), scheme: self.scheme };
        let mut dfe = dfe_train(&sig.received, &training, framing, self.feedback, 0.0)?;
        let dfe_det = dfe_detect(&sig.received, &mut dfe, n, Some(truth))?;

        let mut scores: Vec<ReceiverScore> = [("matched", matched), ("linear_mud", linear), ("dfe_mud", dfe_det)]
            .into_iter()
            .map(|(name, d)| ReceiverScore {
                receiver: name,
                ser: d.ser().unwrap_or(f64::NAN),
                mse: d.mse,
                symbol_errors: d.symbol_errors.unwrap_or(0),
            })
            .collect();
        scores.sort_by(|a, b| {
            a.ser.total_cmp(&b.ser).then(a.mse.total_cmp(&b.mse)).then(a.receiver.cmp(b.receiver))
        });
        Ok(scores)
    }
}

pub fn run_mud_compare(scenario: &ScenarioConfig) -> Result<ExperimentOutput> {
    let scores = MudScenario::from_section(&scenario.params())?.run(scenario.seed)?;
    let mut table = ResultTable::new(
        "mud_compare",
        vec![
            Column::fixed("rank", 0),
            Column::fixed("receiver", 0),
            Column::sci("ser", 6),
            Column::sci("mse", 6),
            Column::fixed("symbol_errors", 0),
        ],
        scenario.provenance(),
    );
    for (rank, s) in scores.into_iter().enumerate() {
        table.push(vec![rank.into(), s.receiver.into(), s.ser.into(), s.mse.into(), s.symbol_errors.into()])?;
    }
    let svg = emit_svg(&table, &PlotSpec::line("Receiver MSE, best first", "rank", &["mse"]).scatter())?;
    Ok(ExperimentOutput { tables: vec![table], plots: vec![("mud_compare".into(), svg)], ..Default::default() })
}

pub fn run_la_sim(scenario: &ScenarioConfig) -> Result<ExperimentOutput> {
    let p = scenario.params();
    let th = LaThresholds {
        th_snr_db: p.get_or("th_snr_db", 10.0)?,
        th_pf: p.get_or("th_pf", 0.2)?,
        p_rmin_dbm: p.get_or("p_rmin_dbm", -90.0)?,
        ci_min_db: p.get_list_or("ci_min_db", vec![-10.0, -3.0, 3.0, 8.0])?,
    };
    let cfg = LaSimConfig {
        window: positive(&p, "window", p.get_or("window", DEFAULT_PF_WINDOW)?)?,
        noise_floor_dbm: p.get_or("noise_floor_dbm", -100.0)?,
    };
    let rounds = positive(&p, "rounds", p.get_or("rounds", 10usize)?)?;
    let pl = PathLossParams::from_section(&scenario.config.section_or_empty("path_loss"))?;
    let nodes: Vec<LaNode> = scenario
        .config
        .sections_with_prefix("node.")
        .enumerate()
        .map(|(id, s)| -> Result<LaNode> {
            Ok(LaNode::new(id, s.get_or("tx_power_dbm", 0.0)?, s.get("distance_m")?)
                .with_rate_level(s.get_or("rate_level", 0usize)?))
        })
        .collect::<Result<_>>()?;
    if nodes.is_empty() {
        return Err(Error::Config { line: 0, msg: "la_sim needs at least one [node.N] section".into() });
    }
    let trace = simulate_la(&nodes, rounds, &pl, &th, &cfg, scenario.seed)?;

    let mut table = ResultTable::new(
        "la_trace",
        vec![
            Column::fixed("round", 0),
            Column::fixed("node", 0),
            Column::fixed("rate_level", 0),
            Column::fixed("snr_db", 6),
            Column::fixed("p_f", 6),
            Column::fixed("received", 0),
        ],
        scenario.provenance(),
    );
    for r in &trace.rows {
        table.push(vec![
            r.round.into(),
            r.node.into(),
            r.rate_level.into(),
            r.snr_db.into(),
            r.p_f.into(),
            usize::from(r.received).into(),
        ])?;
    }

    let level_names: Vec<String> = (0..nodes.len()).map(|i| format!("level_node{i}")).collect();
    let mut cols = vec![Column::fixed("round", 0)];
    cols.extend(level_names.iter().map(|n| Column::fixed(n, 0)));
    let mut levels = ResultTable::new("la_levels", cols, scenario.provenance());
    for chunk in trace.rows.chunks(nodes.len()) {
        let mut row: Vec<Cell> = vec![chunk[0].round.into()];
        row.extend(chunk.iter().map(|r| Cell::from(r.rate_level)));
        levels.push(row)?;
    }
    let refs: Vec<&str> = level_names.iter().map(String::as_str).collect();
    let svg = emit_svg(&levels, &PlotSpec::line("Rate level per round", "round", &refs))?;
    Ok(ExperimentOutput { tables: vec![table], plots: vec![("la_levels".into(), svg)], files: Vec::new() })
}

pub fn run_broadcast_sim(scenario: &ScenarioConfig) -> Result<ExperimentOutput> {
    let p = scenario.params();
    let trials = positive(&p, "trials", p.get_or("trials", 100usize)?)?;
    let max_backoff = p.get_or("max_backoff", 4u64)?;
    let topologies: Vec<Topology> = if p.contains("topology") {
        let path = scenario.resolve(&p.get::<String>("topology")?);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Config { line: 0, msg: format!("{}: {e}", path.display()) })?;
        vec![Topology::parse(&text)?]
    } else {
        let nodes = positive(&p, "nodes", p.get_or("nodes", 20usize)?)?;
        let range = p.get_or("range", 0.35)?;
        let count = positive(&p, "topologies", p.get_or("topologies", 10usize)?)?;
        (0..count)
            .map(|t| {
                random_topology(nodes, range, scenario.seed.derive(2 * t as u64))
                    .map(|(tree, radio)| Topology { tree, radio, source: 0 })
            })
            .collect::<Result<_>>()?
    };

    let mut table = ResultTable::new(
        "broadcast",
        vec![
            Column::fixed("topology", 0),
            Column::fixed("nodes", 0),
            Column::fixed("radio_edges", 0),
            Column::fixed("sp_mean_rebroadcasts", 4),
            Column::fixed("sp_coverage", 4),
            Column::fixed("oos_rebroadcasts", 0),
            Column::fixed("oos_coverage", 4),
        ],
        scenario.provenance(),
    );
    let mut files = Vec::new();
    for (t, topo) in topologies.iter().enumerate() {
        let trial_seed = scenario.seed.derive(2 * t as u64 + 1);
        let summary = broadcast_compare(&topo.tree, &topo.radio, topo.source, trials, max_backoff, trial_seed)?;
        table.push(vec![
            t.into(),
            topo.radio.len().into(),
            topo.radio.edges().len().into(),
            summary.self_pruning_mean_rebroadcasts.into(),
            summary.self_pruning_coverage.into(),
            summary.oos_rebroadcasts.into(),
            summary.oos_coverage.into(),
        ])?;
        if t == 0 {
            let first = self_pruning_broadcast(&topo.tree, &topo.radio, topo.source, max_backoff, trial_seed.derive(0))?;
            let mut events = Vec::new();
            first.write_events_csv(&mut events)?;
            files.push(("broadcast_events.csv".into(), String::from_utf8(events).expect("utf-8")));
            files.push(("topology_0.txt".into(), topo.to_text()));
        }
    }
    let svg = emit_svg(
        &table,
        &PlotSpec::line("Rebroadcasts per topology", "topology", &["sp_mean_rebroadcasts", "oos_rebroadcasts"]).scatter(),
    )?;
    let mut tables = vec![table];

    if p.contains("exhaustive_max_nodes") {
        let max_n: usize = p.get("exhaustive_max_nodes")?;
        if !(2..=8).contains(&max_n) {
            return Err(Error::InvalidParameter("[broadcast_sim] exhaustive_max_nodes must lie in 2..=8".into()));
        }
        let mut study = ResultTable::new(
            "forward_set_study",
            vec![
                Column::fixed("nodes", 0),
                Column::fixed("graphs", 0),
                Column::fixed("oos_total", 0),
                Column::fixed("min_total", 0),
                Column::fixed("optimal", 0),
                Column::fixed("worst_oos", 0),
                Column::fixed("worst_min", 0),
                Column::fixed("mean_ratio", 6),
            ],
            scenario.provenance(),
        );
        for n in 2..=max_n {
            let s = forward_set_study(n);
            study.push(vec![
                n.into(),
                s.graphs.into(),
                s.oos_total.into(),
                s.min_total.into(),
                s.optimal.into(),
                s.worst.0.into(),
                s.worst.1.into(),
                s.mean_ratio().into(),
            ])?;
        }
        tables.push(study);
    }
    Ok(ExperimentOutput { tables, plots: vec![("broadcast".into(), svg)], files })
}
