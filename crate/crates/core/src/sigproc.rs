//! Modulation, demodulation, AWGN and quality metrics.

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::Seed;
use crate::C64;

/// Supported symbol mappings.
///
/// `Oqpsk` is mapped exactly like Gray QPSK: the simulator runs at one sample
/// per symbol, where the half-symbol quadrature offset has no effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modulation {
    Bpsk,
    Oqpsk,
    Qam8,
    Qam16,
}

impl Modulation {
    pub const ALL: [Modulation; 4] = [Self::Bpsk, Self::Oqpsk, Self::Qam8, Self::Qam16];

    pub fn bits_per_symbol(self) -> usize {
        match self {
            Self::Bpsk => 1,
            Self::Oqpsk => 2,
            Self::Qam8 => 3,
            Self::Qam16 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Bpsk => "bpsk",
            Self::Oqpsk => "oqpsk",
            Self::Qam8 => "qam8",
            Self::Qam16 => "qam16",
        }
    }

    pub fn scheme(self) -> ModulationScheme {
        ModulationScheme::new(self)
    }
}

impl std::str::FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Self::Bpsk),
            "oqpsk" | "qpsk" => Ok(Self::Oqpsk),
            "qam8" | "8qam" | "8-qam" => Ok(Self::Qam8),
            "qam16" | "16qam" | "16-qam" => Ok(Self::Qam16),
            other => Err(Error::InvalidParameter(format!("unknown modulation `{other}`"))),
        }
    }
}

impl std::fmt::Display for Modulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Gray code of a 2-bit column/row index: 0,1,2,3 -> 00,01,11,10.
const GRAY2: [u32; 4] = [0b00, 0b01, 0b11, 0b10];
const PAM4: [f64; 4] = [-3.0, -1.0, 1.0, 3.0];

/// A unit-average-energy constellation with Gray bit labels.
///
/// `points[label]` is the point carrying bit label `label` (MSB first).
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationScheme {
    pub kind: Modulation,
    points: Vec<C64>,
}

impl ModulationScheme {
    pub fn new(kind: Modulation) -> Self {
        let mut points = vec![C64::new(0.0, 0.0); 1 << kind.bits_per_symbol()];
        match kind {
            Modulation::Bpsk => {
                points[0] = C64::new(1.0, 0.0);
                points[1] = C64::new(-1.0, 0.0);
            }
            Modulation::Oqpsk => {
                for label in 0..4u32 {
                    let i = if label & 0b10 == 0 { 1.0 } else { -1.0 };
                    let q = if label & 0b01 == 0 { 1.0 } else { -1.0 };
                    points[label as usize] = C64::new(i, q);
                }
            }
            Modulation::Qam8 => {
                // 2 rows x 4 columns; label = row bit, then Gray column bits.
                for (row, q) in [-1.0, 1.0].into_iter().enumerate() {
                    for (col, i) in PAM4.into_iter().enumerate() {
                        let label = ((row as u32) << 2) | GRAY2[col];
                        points[label as usize] = C64::new(i, q);
                    }
                }
            }
            Modulation::Qam16 => {
                for (ci, i) in PAM4.into_iter().enumerate() {
                    for (cq, q) in PAM4.into_iter().enumerate() {
                        let label = (GRAY2[ci] << 2) | GRAY2[cq];
                        points[label as usize] = C64::new(i, q);
                    }
                }
            }
        }
        let energy = points.iter().map(|p| p.norm_sqr()).sum::<f64>() / points.len() as f64;
        let scale = energy.sqrt().recip();
        for p in &mut points {
            *p *= scale;
        }
        Self { kind, points }
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.kind.bits_per_symbol()
    }

    /// Constellation indexed by bit label.
    pub fn points(&self) -> &[C64] {
        &self.points
    }

    pub fn point(&self, label: u32) -> C64 {
        self.points[label as usize]
    }

    /// Label of the nearest point; exact (to 1e-12) ties go to the lower label.
    pub fn nearest_label(&self, sample: C64) -> u32 {
        let mut best = 0u32;
        let mut best_d = (sample - self.points[0]).norm_sqr();
        for (label, p) in self.points.iter().enumerate().skip(1) {
            let d = (sample - p).norm_sqr();
            if d < best_d - 1e-12 * best_d.max(1.0) {
                best_d = d;
                best = label as u32;
            }
        }
        best
    }

    /// Hard decision: nearest constellation point.
    pub fn slice(&self, sample: C64) -> C64 {
        self.point(self.nearest_label(sample))
    }
}

/// Sequence of hard bits (each 0 or 1).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitStream(Vec<u8>);

impl BitStream {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::InvalidParameter(format!("bit value {b} is not 0 or 1")));
        }
        Ok(Self(bits))
    }

    pub fn random(len: usize, seed: Seed) -> Self {
        use rand::Rng;
        let mut rng = seed.rng();
        Self((0..len).map(|_| rng.gen_range(0..=1u8)).collect())
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Complex baseband samples tagged with the mapping that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolStream {
    pub samples: Vec<C64>,
    pub scheme: Modulation,
}

impl SymbolStream {
    pub fn new(samples: Vec<C64>, scheme: Modulation) -> Result<Self> {
        if samples.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
            return Err(Error::InvalidParameter("symbol stream contains non-finite samples".into()));
        }
        Ok(Self { samples, scheme })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Uniformly random constellation symbols.
    pub fn random(len: usize, scheme: Modulation, seed: Seed) -> Self {
        use rand::Rng;
        let table = scheme.scheme();
        let m = table.points().len() as u32;
        let mut rng = seed.rng();
        let samples = (0..len).map(|_| table.point(rng.gen_range(0..m))).collect();
        Self { samples, scheme }
    }
}

pub fn modulate(bits: &BitStream, scheme: &ModulationScheme) -> Result<SymbolStream> {
    let k = scheme.bits_per_symbol();
    if !bits.len().is_multiple_of(k) {
        return Err(Error::PaddingRequired { len: bits.len(), bits_per_symbol: k });
    }
    let samples = bits
        .bits()
        .chunks_exact(k)
        .map(|group| {
            let label = group.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32);
            scheme.point(label)
        })
        .collect();
    Ok(SymbolStream { samples, scheme: scheme.kind })
}

pub fn demodulate(symbols: &SymbolStream, scheme: &ModulationScheme) -> BitStream {
    let k = scheme.bits_per_symbol();
    let mut bits = Vec::with_capacity(symbols.len() * k);
    for &s in &symbols.samples {
        let label = scheme.nearest_label(s);
        bits.extend((0..k).rev().map(|shift| ((label >> shift) & 1) as u8));
    }
    BitStream(bits)
}

/// Per-dimension noise variance for unit-energy symbols at `ebn0_db`.
pub fn noise_variance_per_dim(ebn0_db: f64, bits_per_symbol: usize) -> f64 {
    1.0 / (2.0 * bits_per_symbol as f64 * 10f64.powf(ebn0_db / 10.0))
}

/// Adds circular complex Gaussian noise calibrated to Eb/N0 with Es = 1.
pub fn add_awgn(
    symbols: &SymbolStream,
    ebn0_db: f64,
    scheme: &ModulationScheme,
    seed: Seed,
) -> Result<SymbolStream> {
    if ebn0_db.is_nan() || ebn0_db == f64::NEG_INFINITY {
        return Err(Error::InvalidParameter(format!("Eb/N0 must be finite or +inf, got {ebn0_db}")));
    }
    if ebn0_db == f64::INFINITY {
        return Ok(symbols.clone());
    }
    let sigma = noise_variance_per_dim(ebn0_db, scheme.bits_per_symbol()).sqrt();
    let mut out = symbols.clone();
    add_noise_in_place(&mut out.samples, sigma, seed);
    Ok(out)
}

/// Adds complex noise with per-dimension standard deviation `sigma`.
pub fn add_noise_in_place(samples: &mut [C64], sigma: f64, seed: Seed) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let mut rng = seed.rng();
    for s in samples {
        let re = normal.sample(&mut rng);
        let im = normal.sample(&mut rng);
        *s += C64::new(re, im);
    }
}

pub fn ber(tx: &BitStream, rx: &BitStream) -> Result<f64> {
    Ok(bit_errors(tx, rx)? as f64 / tx.len() as f64)
}

pub fn bit_errors(tx: &BitStream, rx: &BitStream) -> Result<usize> {
    if tx.len() != rx.len() {
        return Err(Error::LengthMismatch { left: tx.len(), right: rx.len() });
    }
    if tx.is_empty() {
        return Err(Error::Empty("bit streams"));
    }
    Ok(tx.bits().iter().zip(rx.bits()).filter(|(a, b)| a != b).count())
}

/// Sliding-window mean of `|reference - estimate|²`.
pub fn mse_trace(reference: &[C64], estimate: &[C64], window: usize) -> Result<Vec<f64>> {
    if reference.len() != estimate.len() {
        return Err(Error::LengthMismatch { left: reference.len(), right: estimate.len() });
    }
    let err: Vec<f64> = reference.iter().zip(estimate).map(|(a, b)| (a - b).norm_sqr()).collect();
    windowed_mean(&err, window)
}

/// Sliding-window mean; output length = `values.len() - window + 1`.
pub fn windowed_mean(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window > values.len() {
        return Err(Error::InvalidWindow { window, len: values.len() });
    }
    let mut out = Vec::with_capacity(values.len() - window + 1);
    let mut acc: f64 = values[..window].iter().sum();
    out.push(acc / window as f64);
    for i in window..values.len() {
        acc += values[i] - values[i - window];
        out.push(acc / window as f64);
    }
    Ok(out)
}
