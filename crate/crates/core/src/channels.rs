//! Stochastic channel generators and channel application.
//!
//! On-body propagation is a single exponentially decaying ray cluster
//! ([`gen_body`]); ground reflection is the same construction shifted by the
//! ground delay ([`gen_ground`]); indoor reflections add a clustered
//! multipath component with exponential cluster inter-arrivals
//! ([`gen_ref`]). All amplitudes live on a uniform delay grid of `delta_ns`.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{Error, Result};
use crate::harness::config::Section;
use crate::rng::{Seed, SimRng};
use crate::sigproc::SymbolStream;
use crate::C64;

const BODY_STREAM: u64 = 1;
const GROUND_STREAM: u64 = 2;
const REF_STREAM: u64 = 3;

/// Complex taps on a uniform delay grid, annotated with cluster start bins.
///
/// `cluster_starts` is sorted; two clusters may share a start bin (e.g. a
/// zero ground delay), so the list is non-decreasing rather than strictly
/// increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelImpulseResponse {
    pub taps: Vec<C64>,
    pub bin_size_ns: f64,
    pub cluster_starts: Vec<usize>,
}

impl ChannelImpulseResponse {
    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t.norm_sqr()).sum()
    }

    pub fn num_clusters(&self) -> usize {
        self.cluster_starts.len()
    }

    /// First bin holding a nonzero tap.
    pub fn first_nonzero_bin(&self) -> Option<usize> {
        self.taps.iter().position(|t| t.norm_sqr() > 0.0)
    }

    /// Index of the latest cluster that started at or before `bin`.
    pub fn cluster_of(&self, bin: usize) -> Option<usize> {
        self.cluster_starts.iter().rposition(|&s| s <= bin)
    }

    /// CSV export with columns `bin,delay_ns,re,im,cluster_id` (`-1` before
    /// the first cluster).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin", "delay_ns", "re", "im", "cluster_id"])?;
        for (bin, tap) in self.taps.iter().enumerate() {
            let cluster = self.cluster_of(bin).map_or(-1, |c| c as i64);
            w.write_record([
                bin.to_string(),
                format!("{:.6}", bin as f64 * self.bin_size_ns),
                format!("{:.9e}", tap.re),
                format!("{:.9e}", tap.im),
                cluster.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Receiver placement on the body. No per-position parameter tables are
/// built in; this is a label carried with user-supplied values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BodyPosition {
    Front,
    Side,
    Back,
}

impl std::str::FromStr for BodyPosition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "front" => Ok(Self::Front),
            "side" => Ok(Self::Side),
            "back" => Ok(Self::Back),
            other => Err(Error::InvalidParameter(format!("unknown body position `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanModelParams {
    pub delta_ns: f64,
    pub num_bins_per_cluster: usize,
    /// Inter-cluster decay Γ in dB/ns.
    pub gamma_cluster_db_per_ns: f64,
    /// Intra-cluster decay γ in dB/ns.
    pub gamma_ray_db_per_ns: f64,
    pub sigma_cluster_db: f64,
    pub sigma_ray_db: f64,
    /// Mean cluster inter-arrival time in ns.
    pub mean_cluster_interarrival_ns: f64,
    pub tau_ground_ns: f64,
    pub position: BodyPosition,
    /// dB standard deviation of the lognormal shadowing amplitude `X`.
    pub shadowing_sigma_db: f64,
}

impl Default for BanModelParams {
    /// Illustrative values only; measured per-position sets must be supplied
    /// through a parameter file.
    fn default() -> Self {
        Self {
            delta_ns: 0.5,
            num_bins_per_cluster: 20,
            gamma_cluster_db_per_ns: 0.3,
            gamma_ray_db_per_ns: 1.0,
            sigma_cluster_db: 3.0,
            sigma_ray_db: 2.0,
            mean_cluster_interarrival_ns: 8.0,
            tau_ground_ns: 12.0,
            position: BodyPosition::Front,
            shadowing_sigma_db: 0.0,
        }
    }
}

impl BanModelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !(self.delta_ns > 0.0) {
            return bad("delta_ns must be > 0");
        }
        if self.num_bins_per_cluster == 0 {
            return bad("num_bins_per_cluster must be >= 1");
        }
        if !(self.gamma_cluster_db_per_ns >= 0.0 && self.gamma_ray_db_per_ns >= 0.0) {
            return bad("decay rates must be >= 0");
        }
        if !(self.sigma_cluster_db >= 0.0 && self.sigma_ray_db >= 0.0 && self.shadowing_sigma_db >= 0.0)
        {
            return bad("fading sigmas must be >= 0");
        }
        if !(self.mean_cluster_interarrival_ns > 0.0) {
            return bad("mean_cluster_interarrival_ns must be > 0");
        }
        if !(self.tau_ground_ns >= 0.0) {
            return bad("tau_ground_ns must be >= 0");
        }
        Ok(())
    }

    pub fn ground_delay_bins(&self) -> usize {
        (self.tau_ground_ns / self.delta_ns).round() as usize
    }

    /// Reads keys of a `[channel]`-style section; absent keys keep defaults.
    pub fn from_section(section: &Section) -> Result<Self> {
        let d = Self::default();
        let p = Self {
            delta_ns: section.get_or("delta_ns", d.delta_ns)?,
            num_bins_per_cluster: section.get_or("num_bins_per_cluster", d.num_bins_per_cluster)?,
            gamma_cluster_db_per_ns: section
                .get_or("gamma_cluster_db_per_ns", d.gamma_cluster_db_per_ns)?,
            gamma_ray_db_per_ns: section.get_or("gamma_ray_db_per_ns", d.gamma_ray_db_per_ns)?,
            sigma_cluster_db: section.get_or("sigma_cluster_db", d.sigma_cluster_db)?,
            sigma_ray_db: section.get_or("sigma_ray_db", d.sigma_ray_db)?,
            mean_cluster_interarrival_ns: section
                .get_or("mean_cluster_interarrival_ns", d.mean_cluster_interarrival_ns)?,
            tau_ground_ns: section.get_or("tau_ground_ns", d.tau_ground_ns)?,
            position: section.get_or("position", d.position)?,
            shadowing_sigma_db: section.get_or("shadowing_sigma_db", d.shadowing_sigma_db)?,
        };
        p.validate()?;
        Ok(p)
    }
}

/// One ray cluster before superposition.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTaps {
    pub start_bin: usize,
    /// Unquantised arrival time (ns) drawn for the cluster.
    pub arrival_ns: f64,
    pub taps: Vec<C64>,
}

fn uniform_phase(rng: &mut SimRng) -> C64 {
    C64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI))
}

/// Rays of one cluster: `20 log10 β_k = offset_db - γ Δ k + σγ n_k`.
fn ray_cluster(params: &BanModelParams, offset_db: f64, rng: &mut SimRng) -> Vec<C64> {
    (0..params.num_bins_per_cluster)
        .map(|k| {
            let n_k: f64 = rng.sample(StandardNormal);
            let db = offset_db - params.gamma_ray_db_per_ns * params.delta_ns * k as f64
                + params.sigma_ray_db * n_k;
            10f64.powf(db / 20.0) * uniform_phase(rng)
        })
        .collect()
}

pub fn body_clusters(params: &BanModelParams, seed: Seed) -> Result<Vec<ClusterTaps>> {
    params.validate()?;
    let mut rng = seed.derive(BODY_STREAM).rng();
    Ok(vec![ClusterTaps { start_bin: 0, arrival_ns: 0.0, taps: ray_cluster(params, 0.0, &mut rng) }])
}

pub fn ground_clusters(params: &BanModelParams, seed: Seed) -> Result<Vec<ClusterTaps>> {
    params.validate()?;
    let mut rng = seed.derive(GROUND_STREAM).rng();
    Ok(vec![ClusterTaps {
        start_bin: params.ground_delay_bins(),
        arrival_ns: params.tau_ground_ns,
        taps: ray_cluster(params, 0.0, &mut rng),
    }])
}

/// Clusters of the indoor reflection component, already scaled by `X/√E`.
///
/// Cluster decay is evaluated at the bin-quantised arrival so that the
/// rendered response obeys the decay law exactly on the grid.
pub fn ref_clusters(params: &BanModelParams, num_clusters: usize, seed: Seed) -> Result<Vec<ClusterTaps>> {
    params.validate()?;
    if num_clusters == 0 {
        return Err(Error::InvalidParameter("num_clusters must be >= 1".into()));
    }
    let mut rng = seed.derive(REF_STREAM).rng();
    let interarrival = Exp::new(1.0 / params.mean_cluster_interarrival_ns)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut clusters = Vec::with_capacity(num_clusters);
    let mut arrival = 0.0;
    for l in 0..num_clusters {
        if l > 0 {
            arrival += interarrival.sample(&mut rng);
        }
        let start_bin = (arrival / params.delta_ns).round() as usize;
        let quantised = start_bin as f64 * params.delta_ns;
        let n_l: f64 = rng.sample(StandardNormal);
        let offset = -params.gamma_cluster_db_per_ns * quantised + params.sigma_cluster_db * n_l;
        clusters.push(ClusterTaps { start_bin, arrival_ns: arrival, taps: ray_cluster(params, offset, &mut rng) });
    }
    // Overlapping clusters superpose, so normalise the rendered response.
    let energy = render(&clusters, params.delta_ns).energy();
    let n_x: f64 = rng.sample(StandardNormal);
    let shadow = 10f64.powf(params.shadowing_sigma_db * n_x / 20.0);
    let scale = shadow / energy.sqrt();
    for c in &mut clusters {
        for t in &mut c.taps {
            *t *= scale;
        }
    }
    Ok(clusters)
}

/// Superposes clusters onto one delay grid.
pub fn render(clusters: &[ClusterTaps], bin_size_ns: f64) -> ChannelImpulseResponse {
    let len = clusters.iter().map(|c| c.start_bin + c.taps.len()).max().unwrap_or(0);
    let mut taps = vec![C64::new(0.0, 0.0); len];
    for c in clusters {
        for (k, t) in c.taps.iter().enumerate() {
            taps[c.start_bin + k] += t;
        }
    }
    let mut cluster_starts: Vec<usize> = clusters.iter().map(|c| c.start_bin).collect();
    cluster_starts.sort_unstable();
    ChannelImpulseResponse { taps, bin_size_ns, cluster_starts }
}

pub fn gen_body(params: &BanModelParams, seed: Seed) -> Result<ChannelImpulseResponse> {
    Ok(render(&body_clusters(params, seed)?, params.delta_ns))
}

pub fn gen_ground(params: &BanModelParams, seed: Seed) -> Result<ChannelImpulseResponse> {
    Ok(render(&ground_clusters(params, seed)?, params.delta_ns))
}

pub fn gen_outdoor_ban(params: &BanModelParams, seed: Seed) -> Result<ChannelImpulseResponse> {
    let mut clusters = body_clusters(params, seed)?;
    clusters.extend(ground_clusters(params, seed)?);
    Ok(render(&clusters, params.delta_ns))
}

pub fn gen_ref(params: &BanModelParams, num_clusters: usize, seed: Seed) -> Result<ChannelImpulseResponse> {
    Ok(render(&ref_clusters(params, num_clusters, seed)?, params.delta_ns))
}

/// Body + ground + reflections. `num_clusters = 0` drops the reflection
/// component and reproduces [`gen_outdoor_ban`].
pub fn gen_indoor_ban(params: &BanModelParams, num_clusters: usize, seed: Seed) -> Result<ChannelImpulseResponse> {
    let mut clusters = indoor_clusters(params, num_clusters, seed)?;
    clusters.sort_by_key(|c| c.start_bin);
    Ok(render(&clusters, params.delta_ns))
}

pub fn indoor_clusters(params: &BanModelParams, num_clusters: usize, seed: Seed) -> Result<Vec<ClusterTaps>> {
    let mut clusters = body_clusters(params, seed)?;
    clusters.extend(ground_clusters(params, seed)?);
    if num_clusters > 0 {
        clusters.extend(ref_clusters(params, num_clusters, seed)?);
    }
    Ok(clusters)
}

/// Ordinary least squares fit; returns `(slope, intercept, r²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, my - slope * mx, r2))
}

/// Regressed dB/ns slope of ray amplitudes within one cluster.
pub fn intra_cluster_slope(cluster: &ClusterTaps, delta_ns: f64) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = cluster
        .taps
        .iter()
        .enumerate()
        .filter(|(_, t)| t.norm() > 0.0)
        .map(|(k, t)| (k as f64 * delta_ns, 20.0 * t.norm().log10()))
        .unzip();
    linear_fit(&xs, &ys).map(|f| f.0)
}

/// Regressed dB/ns slope of cluster leading-ray amplitudes against cluster delay.
pub fn inter_cluster_slope(clusters: &[ClusterTaps], delta_ns: f64) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = clusters
        .iter()
        .filter_map(|c| c.taps.first().map(|t| (c.start_bin as f64 * delta_ns, 20.0 * t.norm().log10())))
        .unzip();
    linear_fit(&xs, &ys).map(|f| f.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathLossParams {
    pub a0_db: f64,
    pub d0_m: f64,
    pub exponent: f64,
    pub sigma_db: f64,
}

impl Default for PathLossParams {
    /// On-body 3GPP-style parameter set: 35.2 dB at 0.1 m, exponent 3.11,
    /// 6.1 dB shadowing.
    fn default() -> Self {
        Self { a0_db: 35.2, d0_m: 0.1, exponent: 3.11, sigma_db: 6.1 }
    }
}

impl PathLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d0_m > 0.0 && self.exponent > 0.0 && self.sigma_db >= 0.0) {
            return Err(Error::InvalidParameter("path loss needs d0 > 0, n > 0, sigma >= 0".into()));
        }
        Ok(())
    }

    pub fn from_section(section: &Section) -> Result<Self> {
        let d = Self::default();
        let p = Self {
            a0_db: section.get_or("a0_db", d.a0_db)?,
            d0_m: section.get_or("d0_m", d.d0_m)?,
            exponent: section.get_or("exponent", d.exponent)?,
            sigma_db: section.get_or("sigma_db", d.sigma_db)?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn median_db(&self, d_m: f64) -> Result<f64> {
        if !(d_m > 0.0) {
            return Err(Error::InvalidParameter(format!("distance must be > 0, got {d_m}")));
        }
        Ok(self.a0_db + 10.0 * self.exponent * (d_m / self.d0_m).log10())
    }

    /// Loss with a shadowing term drawn from `rng`.
    pub fn sample_db<R: Rng + ?Sized>(&self, d_m: f64, rng: &mut R) -> Result<f64> {
        let s: f64 = rng.sample(StandardNormal);
        Ok(self.median_db(d_m)? + self.sigma_db * s)
    }
}

/// `A0 + 10 n log10(d/d0) + s`; `s ~ N(0, σ²)` when a seed is given, else 0.
pub fn path_loss_db(d_m: f64, params: &PathLossParams, shadow: Option<Seed>) -> Result<f64> {
    match shadow {
        None => params.median_db(d_m),
        Some(seed) => params.sample_db(d_m, &mut seed.rng()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbhdsParams {
    pub a: f64,
    pub radius_m: f64,
    pub bs_distance_m: f64,
}

impl Default for GbhdsParams {
    fn default() -> Self {
        Self { a: 0.05, radius_m: 100.0, bs_distance_m: 1000.0 }
    }
}

impl GbhdsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a < 1.0) {
            return Err(Error::InvalidParameter(format!("a must lie in (0, 1), got {}", self.a)));
        }
        if !(self.radius_m > 0.0 && self.bs_distance_m > self.radius_m) {
            return Err(Error::InvalidParameter("need R > 0 and D > R".into()));
        }
        Ok(())
    }

    pub fn from_section(section: &Section) -> Result<Self> {
        let d = Self::default();
        let p = Self {
            a: section.get_or("a", d.a)?,
            radius_m: section.get_or("radius_m", d.radius_m)?,
            bs_distance_m: section.get_or("bs_distance_m", d.bs_distance_m)?,
        };
        p.validate()?;
        Ok(p)
    }

    /// Largest DOA magnitude any scatterer in the disc can produce.
    pub fn max_doa(&self) -> f64 {
        (self.radius_m / self.bs_distance_m).asin()
    }
}

/// Hyperbolic scatterer-distance density `a / (tanh(aR) cosh²(ar))` on `[0, R]`.
pub fn gbhds_pdf(r_m: f64, params: &GbhdsParams) -> f64 {
    if !(0.0..=params.radius_m).contains(&r_m) {
        return 0.0;
    }
    let a = params.a;
    a / ((a * params.radius_m).tanh() * (a * r_m).cosh().powi(2))
}

pub fn gbhds_cdf(r_m: f64, params: &GbhdsParams) -> f64 {
    if r_m <= 0.0 {
        0.0
    } else if r_m >= params.radius_m {
        1.0
    } else {
        (params.a * r_m).tanh() / (params.a * params.radius_m).tanh()
    }
}

/// Inverse CDF of [`gbhds_pdf`] at `u ∈ [0, 1]`.
pub fn gbhds_radius(u: f64, params: &GbhdsParams) -> f64 {
    let r = (u * (params.a * params.radius_m).tanh()).atanh() / params.a;
    r.clamp(0.0, params.radius_m)
}

/// Scatterer in mobile-centred polar coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    pub r_m: f64,
    pub theta: f64,
}

impl Scatterer {
    /// Angle of arrival at a base station `d_m` away along the reference axis.
    pub fn doa(&self, d_m: f64) -> f64 {
        let x = d_m + self.r_m * self.theta.cos();
        let y = self.r_m * self.theta.sin();
        y.atan2(x)
    }
}

pub fn sample_gbhds(params: &GbhdsParams, count: usize, seed: Seed) -> Result<Vec<Scatterer>> {
    params.validate()?;
    if count == 0 {
        return Err(Error::InvalidParameter("count must be >= 1".into()));
    }
    let mut rng = seed.rng();
    Ok((0..count)
        .map(|_| {
            let u: f64 = rng.gen();
            let theta = rng.gen_range(0.0..2.0 * PI);
            Scatterer { r_m: gbhds_radius(u, params), theta }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoaHistogram {
    pub lo: f64,
    pub hi: f64,
    /// Probability mass per bin; sums to 1.
    pub mass: Vec<f64>,
    pub counts: Vec<u64>,
}

impl DoaHistogram {
    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.mass.len() as f64
    }

    pub fn center(&self, bin: usize) -> f64 {
        self.lo + (bin as f64 + 0.5) * self.bin_width()
    }

    pub fn bin_of(&self, angle: f64) -> usize {
        let idx = ((angle - self.lo) / self.bin_width()).floor();
        (idx.max(0.0) as usize).min(self.mass.len() - 1)
    }

    /// Bin containing the line-of-sight angle 0.
    pub fn los_bin(&self) -> usize {
        self.bin_of(0.0)
    }

    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (i, &m) in self.mass.iter().enumerate() {
            if m > self.mass[best] {
                best = i;
            }
        }
        best
    }
}

/// Histogram of DOAs over `[-asin(R/D), asin(R/D)]`, normalised to unit mass.
pub fn gbhds_doa_histogram(params: &GbhdsParams, count: usize, bins: usize, seed: Seed) -> Result<DoaHistogram> {
    if bins == 0 {
        return Err(Error::InvalidParameter("bins must be >= 1".into()));
    }
    let scatterers = sample_gbhds(params, count, seed)?;
    let hi = params.max_doa();
    let mut hist = DoaHistogram { lo: -hi, hi, mass: vec![0.0; bins], counts: vec![0; bins] };
    for s in &scatterers {
        let b = hist.bin_of(s.doa(params.bs_distance_m));
        hist.counts[b] += 1;
    }
    for (m, &c) in hist.mass.iter_mut().zip(&hist.counts) {
        *m = c as f64 / count as f64;
    }
    Ok(hist)
}

/// Linear convolution of the (zero-stuffed when `samples_per_symbol > 1`)
/// signal with the channel taps.
pub fn apply_channel(
    signal: &SymbolStream,
    cir: &ChannelImpulseResponse,
    samples_per_symbol: usize,
) -> Result<SymbolStream> {
    if cir.taps.is_empty() {
        return Err(Error::Empty("channel taps"));
    }
    if samples_per_symbol == 0 {
        return Err(Error::InvalidParameter("samples_per_symbol must be >= 1".into()));
    }
    let samples = convolve_upsampled(&signal.samples, &cir.taps, samples_per_symbol);
    Ok(SymbolStream { samples, scheme: signal.scheme })
}

pub(crate) fn convolve_upsampled(x: &[C64], h: &[C64], sps: usize) -> Vec<C64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() * sps;
    let mut out = vec![C64::new(0.0, 0.0); n + h.len() - 1];
    for (i, &xi) in x.iter().enumerate() {
        let base = i * sps;
        for (j, &hj) in h.iter().enumerate() {
            out[base + j] += xi * hj;
        }
    }
    out
}
