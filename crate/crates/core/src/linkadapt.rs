//! Threshold-driven link adaptation over beacon rounds.
//!
//! Each node transmits to the coordinator once per round. A packet gets
//! through when the received power clears the receiver sensitivity and the
//! carrier-to-interference ratio clears the minimum for the node's current
//! modulation. After every round the node steps its rate level down when the
//! channel is bad (low SNR or too many recent failures) and up otherwise.

use std::collections::VecDeque;
use std::io::Write;

use crate::channels::PathLossParams;
use crate::error::{Error, Result};
use crate::rng::{Seed, SimRng};
use crate::sigproc::Modulation;

/// Default failure-measurement window, in rounds.
pub const DEFAULT_PF_WINDOW: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateLevel {
    pub scheme: Modulation,
    /// Nominal bit rate, relative units.
    pub bit_rate: f64,
}

/// BPSK, O-QPSK, 8-QAM, 16-QAM at nominal rates 1:2:3:4.
pub fn default_rate_table() -> Vec<RateLevel> {
    Modulation::ALL
        .iter()
        .map(|&scheme| RateLevel { scheme, bit_rate: scheme.bits_per_symbol() as f64 })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaThresholds {
    pub th_snr_db: f64,
    pub th_pf: f64,
    pub p_rmin_dbm: f64,
    /// Minimum C/I (dB) per rate level, lowest level first.
    pub ci_min_db: Vec<f64>,
}

impl LaThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.th_pf) {
            return Err(Error::InvalidParameter(format!("th_pf must lie in [0, 1], got {}", self.th_pf)));
        }
        if self.ci_min_db.is_empty() {
            return Err(Error::InvalidParameter("need one ci_min entry per rate level".into()));
        }
        Ok(())
    }

    pub fn num_levels(&self) -> usize {
        self.ci_min_db.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaNode {
    pub id: usize,
    /// Latest received beacon power.
    pub beacon_power_dbm: f64,
    /// Failure fraction over the measurement window.
    pub p_f: f64,
    pub rate_level: usize,
    pub tx_power_dbm: f64,
    pub distance_m: f64,
    outcomes: VecDeque<bool>,
}

impl LaNode {
    pub fn new(id: usize, tx_power_dbm: f64, distance_m: f64) -> Self {
        Self {
            id,
            beacon_power_dbm: f64::NEG_INFINITY,
            p_f: 0.0,
            rate_level: 0,
            tx_power_dbm,
            distance_m,
            outcomes: VecDeque::new(),
        }
    }

    pub fn with_rate_level(mut self, level: usize) -> Self {
        self.rate_level = level;
        self
    }

    /// Records a packet outcome and refreshes `p_f` over the last `window`.
    pub fn record(&mut self, received: bool, window: usize) {
        self.outcomes.push_back(received);
        while self.outcomes.len() > window.max(1) {
            self.outcomes.pop_front();
        }
        let failures = self.outcomes.iter().filter(|&&ok| !ok).count();
        self.p_f = failures as f64 / self.outcomes.len() as f64;
    }

    /// `P_tx − A(d)`, shadowed when a seed is given.
    pub fn received_power_dbm(&self, pl: &PathLossParams, shadow: Option<&mut SimRng>) -> Result<f64> {
        let loss = match shadow {
            Some(rng) => pl.sample_db(self.distance_m, rng)?,
            None => pl.median_db(self.distance_m)?,
        };
        Ok(self.tx_power_dbm - loss)
    }
}

fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Reception test for a known received power: `P_R > P_Rmin` and
/// `C/I ≥ C/I_min` of the node's level (equality passes).
pub fn reception_ok(received_dbm: f64, interference_dbm: f64, rate_level: usize, th: &LaThresholds) -> Result<bool> {
    let ci_min = *th.ci_min_db.get(rate_level).ok_or_else(|| {
        Error::InvalidParameter(format!("rate level {rate_level} outside table of {}", th.num_levels()))
    })?;
    let ci = received_dbm - interference_dbm;
    Ok(received_dbm > th.p_rmin_dbm && ci >= ci_min)
}

pub fn packet_received(
    node: &LaNode,
    interference_power_dbm: f64,
    pl: &PathLossParams,
    th: &LaThresholds,
    shadow: Option<Seed>,
) -> Result<bool> {
    let mut rng = shadow.map(Seed::rng);
    let p_r = node.received_power_dbm(pl, rng.as_mut())?;
    reception_ok(p_r, interference_power_dbm, node.rate_level, th)
}

/// One adaptation decision. Bad channel (SNR below threshold or failure
/// fraction above threshold) steps down; otherwise the level steps up.
/// Levels clamp at both ends.
pub fn la_update(node: &LaNode, measured_snr_db: f64, th: &LaThresholds) -> LaNode {
    let mut next = node.clone();
    let top = th.num_levels().saturating_sub(1);
    if measured_snr_db < th.th_snr_db || node.p_f > th.th_pf {
        next.rate_level = node.rate_level.saturating_sub(1);
    } else {
        next.rate_level = (node.rate_level + 1).min(top);
    }
    next
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaSimConfig {
    pub window: usize,
    /// Receiver noise floor used to turn received power into SNR.
    pub noise_floor_dbm: f64,
}

impl Default for LaSimConfig {
    fn default() -> Self {
        Self { window: DEFAULT_PF_WINDOW, noise_floor_dbm: -100.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaTraceRow {
    pub round: usize,
    pub node: usize,
    /// Level used for this round's packet.
    pub rate_level: usize,
    pub snr_db: f64,
    /// Failure fraction including this round.
    pub p_f: f64,
    pub received: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaTrace {
    pub rows: Vec<LaTraceRow>,
    pub nodes: Vec<LaNode>,
}

impl LaTrace {
    /// CSV `round,node,rate_level,snr_db,p_f,received`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["round", "node", "rate_level", "snr_db", "p_f", "received"])?;
        for r in &self.rows {
            w.write_record([
                r.round.to_string(),
                r.node.to_string(),
                r.rate_level.to_string(),
                format!("{:.6}", r.snr_db),
                format!("{:.6}", r.p_f),
                u8::from(r.received).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `rounds` rounds in which every node transmits simultaneously.
///
/// Interference for node `n` is the linear sum of all other nodes' received
/// powers in that round. Shadowing (when `pl.sigma_db > 0`) is drawn once
/// per node per round.
pub fn simulate_la(
    nodes: &[LaNode],
    rounds: usize,
    pl: &PathLossParams,
    th: &LaThresholds,
    cfg: &LaSimConfig,
    seed: Seed,
) -> Result<LaTrace> {
    th.validate()?;
    pl.validate()?;
    if rounds == 0 {
        return Err(Error::InvalidParameter("rounds must be >= 1".into()));
    }
    if let Some(n) = nodes.iter().find(|n| n.rate_level >= th.num_levels()) {
        return Err(Error::InvalidParameter(format!("node {} starts outside the rate table", n.id)));
    }
    let mut nodes = nodes.to_vec();
    let mut rng = seed.rng();
    let mut rows = Vec::with_capacity(rounds * nodes.len());
    for round in 0..rounds {
        let powers: Vec<f64> = nodes
            .iter()
            .map(|n| n.received_power_dbm(pl, (pl.sigma_db > 0.0).then_some(&mut rng)))
            .collect::<Result<_>>()?;
        let total_mw: f64 = powers.iter().map(|&p| dbm_to_mw(p)).sum();
        for (i, node) in nodes.iter_mut().enumerate() {
            let others = (total_mw - dbm_to_mw(powers[i])).max(0.0);
            let interference = if others == 0.0 { f64::NEG_INFINITY } else { mw_to_dbm(others) };
            let level = node.rate_level;
            let ok = reception_ok(powers[i], interference, level, th)?;
            node.beacon_power_dbm = powers[i];
            node.record(ok, cfg.window);
            let snr = powers[i] - cfg.noise_floor_dbm;
            rows.push(LaTraceRow { round, node: node.id, rate_level: level, snr_db: snr, p_f: node.p_f, received: ok });
            *node = la_update(node, snr, th);
        }
    }
    Ok(LaTrace { rows, nodes })
}
