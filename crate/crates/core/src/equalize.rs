//! Receivers: multiuser signal synthesis, Wiener (linear MUD), decision
//! feedback (non-linear MUD) and blind CMA / DSE-CMA equalisation.
//!
//! Linear filters are applied as a plain row-times-column product
//! `x_k = w · r_k`, where `r_k` is the regressor that [`Framing`] cuts out of
//! the received samples for symbol `k`. With `Γ_rr = E[r rᴴ]` and
//! `γ_ar = E[a rᴴ]` the MMSE solution is `w = γ_ar Γ_rr⁻¹`.

use std::io::Write;

use rand::Rng;

use crate::channels::convolve_upsampled;
pub use crate::linalg::CMatrix;
use crate::error::{Error, Result};
use crate::linalg::{quad_form, solve_row, trace_re};
use crate::rng::{Seed, SimRng};
use crate::sigproc::{add_noise_in_place, ModulationScheme, SymbolStream};
use crate::C64;

/// Default ridge, relative to the mean diagonal of `Γ_rr`.
pub const DEFAULT_RIDGE_REL: f64 = 1e-9;
/// `|y|` above this aborts a blind run.
pub const DIVERGENCE_LIMIT: f64 = 1e3;
/// Symmetric 5-tap channel used for blind-equalisation convergence runs.
pub const REFERENCE_CHANNEL: [f64; 5] = [0.227, 0.460, 0.688, 0.460, 0.227];

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Several users' symbol streams, each shaped by its composite pulse
/// (channel convolved with signature) at `samples_per_symbol` samples per
/// symbol. User 0 is the desired user.
#[derive(Debug, Clone)]
pub struct MultiuserScene {
    pub symbols: Vec<SymbolStream>,
    pub templates: Vec<Vec<C64>>,
    pub samples_per_symbol: usize,
    pub noise_ebn0_db: f64,
}

impl MultiuserScene {
    pub fn num_users(&self) -> usize {
        self.symbols.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.symbols.is_empty() {
            return Err(Error::Empty("multiuser scene has no users"));
        }
        if self.symbols.len() != self.templates.len() {
            return Err(Error::LengthMismatch { left: self.symbols.len(), right: self.templates.len() });
        }
        if self.templates.iter().any(Vec::is_empty) {
            return Err(Error::Empty("user template"));
        }
        if self.samples_per_symbol == 0 {
            return Err(Error::InvalidParameter("samples_per_symbol must be >= 1".into()));
        }
        Ok(())
    }

    /// Received sample count.
    pub fn len(&self) -> usize {
        self.symbols
            .iter()
            .zip(&self.templates)
            .map(|(s, t)| if s.is_empty() { 0 } else { (s.len() - 1) * self.samples_per_symbol + t.len() })
            .max()
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-dimension noise variance so the desired user sees `noise_ebn0_db`.
    pub fn noise_variance_per_dim(&self) -> f64 {
        if self.noise_ebn0_db == f64::INFINITY {
            return 0.0;
        }
        let es: f64 = self.templates[0].iter().map(|t| t.norm_sqr()).sum();
        let k = self.symbols[0].scheme.bits_per_symbol() as f64;
        es / (2.0 * k * 10f64.powf(self.noise_ebn0_db / 10.0))
    }

    /// Framing of `len` samples starting at each of the desired user's symbols.
    pub fn framing(&self, len: usize) -> Framing {
        Framing { samples_per_symbol: self.samples_per_symbol, len, offset: 0 }
    }
}

/// Received samples and their additive decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiuserSignal {
    pub received: Vec<C64>,
    pub desired: Vec<C64>,
    /// Multiuser interference from users other than user 0.
    pub mui: Vec<C64>,
    pub noise: Vec<C64>,
}

pub fn synth_multiuser(scene: &MultiuserScene, seed: Seed) -> Result<MultiuserSignal> {
    scene.validate()?;
    let len = scene.len();
    let ns = scene.samples_per_symbol;
    let shaped = |u: usize| {
        let mut v = convolve_upsampled(&scene.symbols[u].samples, &scene.templates[u], ns);
        v.resize(len, ZERO);
        v
    };
    let desired = shaped(0);
    let mut mui = vec![ZERO; len];
    for u in 1..scene.num_users() {
        for (m, v) in mui.iter_mut().zip(shaped(u)) {
            *m += v;
        }
    }
    let mut noise = vec![ZERO; len];
    add_noise_in_place(&mut noise, scene.noise_variance_per_dim().sqrt(), seed);
    let received = (0..len).map(|i| desired[i] + mui[i] + noise[i]).collect();
    Ok(MultiuserSignal { received, desired, mui, noise })
}

/// Which received samples form the regressor of symbol `k`:
/// `received[k·Ns + offset + i]` for `i` in `0..len`, zero outside the record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Framing {
    pub samples_per_symbol: usize,
    pub len: usize,
    pub offset: isize,
}

impl Framing {
    pub fn symbol_spaced(len: usize, offset: isize) -> Self {
        Self { samples_per_symbol: 1, len, offset }
    }

    pub fn regressor_into(&self, received: &[C64], k: usize, out: &mut [C64]) {
        let base = (k * self.samples_per_symbol) as isize + self.offset;
        for (i, slot) in out.iter_mut().enumerate() {
            let idx = base + i as isize;
            *slot = if idx >= 0 && (idx as usize) < received.len() { received[idx as usize] } else { ZERO };
        }
    }

    pub fn regressor(&self, received: &[C64], k: usize) -> Vec<C64> {
        let mut v = vec![ZERO; self.len];
        self.regressor_into(received, k, &mut v);
        v
    }
}

fn dot(w: &[C64], r: &[C64]) -> C64 {
    w.iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Sample second-order statistics of regressors `z_k` against symbols `a_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlations {
    /// `Γ = mean(z zᴴ)`.
    pub autocorr: CMatrix,
    /// `γ = mean(a zᴴ)` as a row vector.
    pub crosscorr: Vec<C64>,
    /// `mean(|a|²)`.
    pub symbol_power: f64,
    pub count: usize,
}

impl Correlations {
    fn accumulate<'a>(dim: usize, pairs: impl Iterator<Item = (C64, &'a [C64])>) -> Self {
        let mut autocorr = CMatrix::zeros(dim, dim);
        let mut crosscorr = vec![ZERO; dim];
        let mut symbol_power = 0.0;
        let mut count = 0usize;
        for (a, z) in pairs {
            for i in 0..dim {
                crosscorr[i] += a * z[i].conj();
                for j in i..dim {
                    autocorr[(i, j)] += z[i] * z[j].conj();
                }
            }
            symbol_power += a.norm_sqr();
            count += 1;
        }
        let n = count.max(1) as f64;
        for i in 0..dim {
            crosscorr[i] /= n;
            for j in i..dim {
                let v = autocorr[(i, j)] / n;
                autocorr[(i, j)] = v;
                autocorr[(j, i)] = v.conj();
            }
        }
        Self { autocorr, crosscorr, symbol_power: symbol_power / n, count }
    }

    /// Empirical `mean |a - w·z|²` over the data these statistics came from.
    pub fn mse(&self, w: &[C64]) -> f64 {
        let cross: C64 = self.crosscorr.iter().zip(w).map(|(g, wi)| g * wi.conj()).sum();
        self.symbol_power - 2.0 * cross.re + quad_form(&self.autocorr, w)
    }

    /// Absolute ridge corresponding to `rel` times the mean diagonal.
    pub fn relative_ridge(&self, rel: f64) -> f64 {
        rel * trace_re(&self.autocorr) / self.autocorr.nrows() as f64
    }
}

pub fn estimate_correlations(received: &[C64], training: &[C64], framing: Framing) -> Result<Correlations> {
    let needed = 10 * framing.len;
    if framing.len == 0 {
        return Err(Error::InvalidParameter("regressor length must be >= 1".into()));
    }
    if training.len() < needed {
        return Err(Error::InsufficientTraining { needed, got: training.len() });
    }
    let regressors: Vec<Vec<C64>> = (0..training.len()).map(|k| framing.regressor(received, k)).collect();
    Ok(Correlations::accumulate(
        framing.len,
        training.iter().copied().zip(regressors.iter().map(Vec::as_slice)),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WienerEqualizer {
    pub taps: Vec<C64>,
    pub framing: Framing,
    pub autocorr: CMatrix,
    pub crosscorr: Vec<C64>,
}

/// `w = γ_ar (Γ_rr + ridge·I)⁻¹`.
pub fn wiener_solve(corr: &Correlations, framing: Framing, ridge: f64) -> Result<WienerEqualizer> {
    if framing.len != corr.crosscorr.len() {
        return Err(Error::LengthMismatch { left: framing.len, right: corr.crosscorr.len() });
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidParameter(format!("ridge must be >= 0, got {ridge}")));
    }
    let taps = solve_row(&corr.autocorr, &corr.crosscorr, ridge)?;
    Ok(WienerEqualizer { taps, framing, autocorr: corr.autocorr.clone(), crosscorr: corr.crosscorr.clone() })
}

/// Convenience: estimate statistics and solve with the default relative ridge.
pub fn train_wiener(received: &[C64], training: &[C64], framing: Framing) -> Result<WienerEqualizer> {
    let corr = estimate_correlations(received, training, framing)?;
    wiener_solve(&corr, framing, corr.relative_ridge(DEFAULT_RIDGE_REL))
}

/// Matched filter for `template`, scaled so a lone symbol passes with unit gain.
pub fn matched_filter(template: &[C64], samples_per_symbol: usize) -> (Vec<C64>, Framing) {
    let energy: f64 = template.iter().map(|t| t.norm_sqr()).sum();
    let taps = template.iter().map(|t| t.conj() / energy).collect();
    (taps, Framing { samples_per_symbol, len: template.len(), offset: 0 })
}

/// Hard decisions plus the post-equalisation residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub symbols: SymbolStream,
    /// Soft outputs before slicing.
    pub outputs: Vec<C64>,
    /// Mean `|output - reference|²`, or against the decisions when no
    /// reference is known. ISI, MUI and noise are not separated.
    pub mse: f64,
    /// Symbol errors against the reference, if one was given.
    pub symbol_errors: Option<usize>,
}

impl Detection {
    pub fn ser(&self) -> Option<f64> {
        self.symbol_errors.map(|e| e as f64 / self.symbols.len().max(1) as f64)
    }
}

fn finish_detection(
    outputs: Vec<C64>,
    decisions: Vec<C64>,
    scheme: &ModulationScheme,
    reference: Option<&[C64]>,
) -> Result<Detection> {
    let n = outputs.len();
    let (mse, symbol_errors) = match reference {
        Some(r) => {
            if r.len() < n {
                return Err(Error::LengthMismatch { left: n, right: r.len() });
            }
            let mse = outputs.iter().zip(r).map(|(y, a)| (y - a).norm_sqr()).sum::<f64>() / n.max(1) as f64;
            let errs = decisions.iter().zip(r).filter(|(d, a)| (*d - *a).norm() > 1e-9).count();
            (mse, Some(errs))
        }
        None => (
            outputs.iter().zip(&decisions).map(|(y, d)| (y - d).norm_sqr()).sum::<f64>() / n.max(1) as f64,
            None,
        ),
    };
    Ok(Detection { symbols: SymbolStream { samples: decisions, scheme: scheme.kind }, outputs, mse, symbol_errors })
}

/// Applies a linear filter per symbol and slices to the nearest point.
pub fn linear_detect(
    received: &[C64],
    taps: &[C64],
    framing: Framing,
    scheme: &ModulationScheme,
    num_symbols: usize,
    reference: Option<&[C64]>,
) -> Result<Detection> {
    if taps.len() != framing.len {
        return Err(Error::LengthMismatch { left: taps.len(), right: framing.len });
    }
    let mut r = vec![ZERO; framing.len];
    let mut outputs = Vec::with_capacity(num_symbols);
    let mut decisions = Vec::with_capacity(num_symbols);
    for k in 0..num_symbols {
        framing.regressor_into(received, k, &mut r);
        let x = dot(taps, &r);
        outputs.push(x);
        decisions.push(scheme.slice(x));
    }
    finish_detection(outputs, decisions, scheme, reference)
}

pub fn linear_mud_detect(
    received: &[C64],
    eq: &WienerEqualizer,
    scheme: &ModulationScheme,
    num_symbols: usize,
    reference: Option<&[C64]>,
) -> Result<Detection> {
    linear_detect(received, &eq.taps, eq.framing, scheme, num_symbols, reference)
}

/// Decision-feedback equaliser: `x_k = w_ff · r_k + w_fb · â_k` where
/// `â_k = [â_{k-1}, …, â_{k-Nb}]` holds the most recent decisions first.
#[derive(Debug, Clone, PartialEq)]
pub struct DfeEqualizer {
    pub w_ff: Vec<C64>,
    pub w_fb: Vec<C64>,
    pub framing: Framing,
    pub scheme: ModulationScheme,
    history: Vec<C64>,
}

impl DfeEqualizer {
    pub fn new(w_ff: Vec<C64>, w_fb: Vec<C64>, framing: Framing, scheme: ModulationScheme) -> Result<Self> {
        if w_ff.is_empty() || w_ff.len() != framing.len {
            return Err(Error::InvalidParameter("feedforward length must equal framing length >= 1".into()));
        }
        let history = vec![ZERO; w_fb.len()];
        Ok(Self { w_ff, w_fb, framing, scheme, history })
    }

    /// Most recent decision first; length `Nb`.
    pub fn history(&self) -> &[C64] {
        &self.history
    }

    pub fn reset(&mut self) {
        self.history.iter_mut().for_each(|h| *h = ZERO);
    }

    pub fn output(&self, regressor: &[C64], feedback: &[C64]) -> C64 {
        dot(&self.w_ff, regressor) + dot(&self.w_fb, feedback)
    }

    /// One symbol period: filter, slice, and shift the decision into history.
    pub fn step(&mut self, regressor: &[C64]) -> (C64, C64) {
        let x = self.output(regressor, &self.history);
        let decision = self.scheme.slice(x);
        if !self.history.is_empty() {
            self.history.rotate_right(1);
            self.history[0] = decision;
        }
        (x, decision)
    }
}

fn feedback_vector(symbols: &[C64], k: usize, nb: usize, out: &mut [C64]) {
    for (i, slot) in out.iter_mut().enumerate().take(nb) {
        *slot = if k > i { symbols[k - 1 - i] } else { ZERO };
    }
}

/// Jointly MMSE-optimal feedforward/feedback taps, with the known training
/// symbols standing in for past decisions.
pub fn dfe_train(
    received: &[C64],
    training: &SymbolStream,
    framing: Framing,
    nb: usize,
    ridge: f64,
) -> Result<DfeEqualizer> {
    let nf = framing.len;
    if nf == 0 {
        return Err(Error::InvalidParameter("Nf must be >= 1".into()));
    }
    let dim = nf + nb;
    let needed = 10 * dim;
    if training.len() < needed {
        return Err(Error::InsufficientTraining { needed, got: training.len() });
    }
    let a = &training.samples;
    let joint: Vec<Vec<C64>> = (0..a.len())
        .map(|k| {
            let mut z = vec![ZERO; dim];
            framing.regressor_into(received, k, &mut z[..nf]);
            feedback_vector(a, k, nb, &mut z[nf..]);
            z
        })
        .collect();
    let corr = Correlations::accumulate(dim, a.iter().copied().zip(joint.iter().map(Vec::as_slice)));
    let w = solve_row(&corr.autocorr, &corr.crosscorr, ridge)?;
    DfeEqualizer::new(w[..nf].to_vec(), w[nf..].to_vec(), framing, training.scheme.scheme())
}

/// Training-mode outputs: the feedback filter sees the true symbols.
pub fn dfe_training_outputs(received: &[C64], eq: &DfeEqualizer, training: &[C64]) -> Vec<C64> {
    let nb = eq.w_fb.len();
    let mut r = vec![ZERO; eq.framing.len];
    let mut fb = vec![ZERO; nb];
    (0..training.len())
        .map(|k| {
            eq.framing.regressor_into(received, k, &mut r);
            feedback_vector(training, k, nb, &mut fb);
            eq.output(&r, &fb)
        })
        .collect()
}

/// Decision-directed detection from a cleared history.
pub fn dfe_detect(
    received: &[C64],
    eq: &mut DfeEqualizer,
    num_symbols: usize,
    reference: Option<&[C64]>,
) -> Result<Detection> {
    eq.reset();
    let mut r = vec![ZERO; eq.framing.len];
    let mut outputs = Vec::with_capacity(num_symbols);
    let mut decisions = Vec::with_capacity(num_symbols);
    for k in 0..num_symbols {
        eq.framing.regressor_into(received, k, &mut r);
        let (x, d) = eq.step(&r);
        outputs.push(x);
        decisions.push(d);
    }
    let scheme = eq.scheme.clone();
    finish_detection(outputs, decisions, &scheme, reference)
}

/// `E|a|⁴ / E|a|²` over the constellation.
pub fn dispersion_constant(scheme: &ModulationScheme) -> f64 {
    let m2: f64 = scheme.points().iter().map(|p| p.norm_sqr()).sum();
    let m4: f64 = scheme.points().iter().map(|p| p.norm_sqr().powi(2)).sum();
    m4 / m2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmaVariant {
    Cma,
    /// Dithered signed-error CMA.
    DseCma,
}

impl std::str::FromStr for CmaVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "cma" => Ok(Self::Cma),
            "dse_cma" | "dsecma" => Ok(Self::DseCma),
            other => Err(Error::InvalidParameter(format!("unknown CMA variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaEqualizer {
    pub taps: Vec<C64>,
    pub step: f64,
    pub dispersion: f64,
    pub variant: CmaVariant,
    /// Dither amplitude `α_d`; only used by DSE-CMA.
    pub dither_amplitude: f64,
}

impl CmaEqualizer {
    /// Unit impulse at the centre tap. `nf` must be odd. The dither
    /// amplitude defaults to `R2`.
    pub fn center_spike(nf: usize, step: f64, dispersion: f64, variant: CmaVariant) -> Result<Self> {
        if nf == 0 || nf.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!("CMA length must be odd, got {nf}")));
        }
        if !(step >= 0.0) || !(dispersion > 0.0) {
            return Err(Error::InvalidParameter("need step >= 0 and dispersion > 0".into()));
        }
        let mut taps = vec![ZERO; nf];
        taps[nf / 2] = C64::new(1.0, 0.0);
        Ok(Self { taps, step, dispersion, variant, dither_amplitude: dispersion })
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// `y = fᴴ r`.
    pub fn output(&self, regressor: &[C64]) -> C64 {
        self.taps.iter().zip(regressor).map(|(f, r)| f.conj() * r).sum()
    }
}

fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// One adaptation step; returns the pre-update output `y(n)`.
///
/// `f ← f + μ · conj(ψ(y)) · r(n)` with `ψ(y) = y (R2 − |y|²)` for CMA and
/// the dithered sign of that error for DSE-CMA.
pub fn cma_step(eq: &mut CmaEqualizer, regressor: &[C64], rng: &mut SimRng) -> Result<C64> {
    if regressor.len() != eq.taps.len() {
        return Err(Error::LengthMismatch { left: regressor.len(), right: eq.taps.len() });
    }
    let y = eq.output(regressor);
    let e = y * (eq.dispersion - y.norm_sqr());
    let psi = match eq.variant {
        CmaVariant::Cma => e,
        CmaVariant::DseCma => {
            let alpha = eq.dither_amplitude;
            let d_re = alpha * (2.0 * std::f64::consts::PI * rng.gen::<f64>()).sin();
            let d_im = alpha * (2.0 * std::f64::consts::PI * rng.gen::<f64>()).sin();
            C64::new(alpha * sign(e.re + d_re), alpha * sign(e.im + d_im))
        }
    };
    let g = eq.step * psi.conj();
    for (f, r) in eq.taps.iter_mut().zip(regressor) {
        *f += g * r;
    }
    Ok(y)
}

/// Output of [`run_blind`].
#[derive(Debug, Clone, PartialEq)]
pub struct BlindRun {
    pub outputs: Vec<C64>,
    /// Per-iteration squared error against the aligned reference, or the
    /// constant-modulus cost `(|y|² − R2)²` when no reference was supplied.
    pub errors: Vec<f64>,
    /// Windowed mean of `errors`.
    pub mse_trace: Vec<f64>,
    /// Decision delay chosen in `0..Nf`, test mode only.
    pub delay: Option<usize>,
    /// Quadrant derotation applied before measuring, test mode only.
    pub rotation: C64,
    pub equalizer: CmaEqualizer,
}

impl BlindRun {
    pub fn initial_mse(&self) -> f64 {
        self.mse_trace[0]
    }

    pub fn final_mse(&self) -> f64 {
        *self.mse_trace.last().expect("non-empty trace")
    }

    /// `10 log10(initial / final)`.
    pub fn improvement_db(&self) -> f64 {
        10.0 * (self.initial_mse() / self.final_mse()).log10()
    }
}

/// Slides an `Nf`-sample regressor `[x(n), x(n−1), …, x(n−Nf+1)]` over
/// `received` for `iterations` steps.
///
/// With a `reference` the output is aligned by the delay in `0..Nf` and the
/// quadrant rotation that minimise the error over the final `window`
/// outputs.
pub fn run_blind(
    received: &[C64],
    mut eq: CmaEqualizer,
    iterations: usize,
    window: usize,
    seed: Seed,
    reference: Option<&[C64]>,
) -> Result<BlindRun> {
    let nf = eq.len();
    if received.len() < nf + iterations {
        return Err(Error::InsufficientTraining { needed: nf + iterations, got: received.len() });
    }
    if window == 0 || window > iterations {
        return Err(Error::InvalidWindow { window, len: iterations });
    }
    let mut rng = seed.rng();
    let mut r = vec![ZERO; nf];
    let mut outputs = Vec::with_capacity(iterations);
    for i in 0..iterations {
        let n = nf - 1 + i;
        for (j, slot) in r.iter_mut().enumerate() {
            *slot = received[n - j];
        }
        let y = cma_step(&mut eq, &r, &mut rng)?;
        if !(y.norm() <= DIVERGENCE_LIMIT) {
            return Err(Error::Divergence { step: i, magnitude: y.norm() });
        }
        outputs.push(y);
    }

    let (errors, delay, rotation): (Vec<f64>, Option<usize>, C64) = match reference {
        None => {
            let r2 = eq.dispersion;
            (outputs.iter().map(|y| (y.norm_sqr() - r2).powi(2)).collect(), None, C64::new(1.0, 0.0))
        }
        Some(s) => {
            let rotations = [C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(-1.0, 0.0), C64::new(0.0, -1.0)];
            let tail = iterations - window;
            let mut best = (f64::INFINITY, 0usize, rotations[0]);
            for d in 0..nf {
                for rot in rotations {
                    let err: f64 = (tail..iterations)
                        .map(|i| match s.get(nf - 1 + i - d) {
                            Some(a) => (outputs[i] * rot - a).norm_sqr(),
                            None => f64::INFINITY,
                        })
                        .sum();
                    if err < best.0 {
                        best = (err, d, rot);
                    }
                }
            }
            let (_, d, rot) = best;
            let errors = (0..iterations)
                .map(|i| {
                    let a = s.get(nf - 1 + i - d).copied().unwrap_or(ZERO);
                    (outputs[i] * rot - a).norm_sqr()
                })
                .collect();
            (errors, Some(d), rot)
        }
    };
    let mse_trace = crate::sigproc::windowed_mean(&errors, window)?;
    Ok(BlindRun { outputs, errors, mse_trace, delay, rotation, equalizer: eq })
}

/// CSV `index,re,im`.
pub fn write_taps_csv<W: Write>(taps: &[C64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "re", "im"])?;
    for (i, t) in taps.iter().enumerate() {
        w.write_record([i.to_string(), format!("{:.9e}", t.re), format!("{:.9e}", t.im)])?;
    }
    w.flush()?;
    Ok(())
}

/// CSV `iteration,mse`.
pub fn write_mse_csv<W: Write>(trace: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "mse"])?;
    for (i, v) in trace.iter().enumerate() {
        w.write_record([i.to_string(), format!("{v:.9e}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigproc::Modulation;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn isi_received(channel: &[f64], symbols: &SymbolStream, ebn0_db: f64, seed: Seed) -> Vec<C64> {
        let scene = MultiuserScene {
            symbols: vec![symbols.clone()],
            templates: vec![channel.iter().map(|&v| c(v)).collect()],
            samples_per_symbol: 1,
            noise_ebn0_db: ebn0_db,
        };
        synth_multiuser(&scene, seed).unwrap().received
    }

    #[test]
    fn single_user_identity_scene() {
        let s = SymbolStream::random(50, Modulation::Qam16, Seed(1));
        let scene = MultiuserScene {
            symbols: vec![s.clone()],
            templates: vec![vec![c(1.0)]],
            samples_per_symbol: 1,
            noise_ebn0_db: f64::INFINITY,
        };
        let sig = synth_multiuser(&scene, Seed(2)).unwrap();
        assert_eq!(sig.received, s.samples);
    }

    #[test]
    fn disjoint_templates_leave_no_mui_on_user_support() {
        let scene = MultiuserScene {
            symbols: vec![
                SymbolStream::random(40, Modulation::Bpsk, Seed(1)),
                SymbolStream::random(40, Modulation::Bpsk, Seed(2)),
            ],
            templates: vec![vec![c(1.0), c(1.0), ZERO, ZERO], vec![ZERO, ZERO, c(1.0), c(-1.0)]],
            samples_per_symbol: 4,
            noise_ebn0_db: 10.0,
        };
        let sig = synth_multiuser(&scene, Seed(3)).unwrap();
        let energy: f64 = (0..40).flat_map(|k| [4 * k, 4 * k + 1]).map(|i| sig.mui[i].norm_sqr()).sum();
        assert_eq!(energy, 0.0);
        for i in 0..sig.received.len() {
            assert_eq!(sig.received[i], sig.desired[i] + sig.mui[i] + sig.noise[i]);
        }
    }

    #[test]
    fn correlations_identity_channel() {
        let s = SymbolStream::random(10_000, Modulation::Bpsk, Seed(4));
        let corr = estimate_correlations(&s.samples, &s.samples, Framing::symbol_spaced(1, 0)).unwrap();
        assert!((corr.autocorr[(0, 0)].re - 1.0).abs() < 1e-12);
        assert!((corr.crosscorr[0] - c(1.0)).norm() < 1e-12);
    }

    #[test]
    fn correlations_pure_noise_uncorrelated() {
        let n = 20_000;
        let s = SymbolStream::random(n, Modulation::Bpsk, Seed(4));
        let mut noise = vec![ZERO; n];
        add_noise_in_place(&mut noise, 1.0, Seed(5));
        let f = Framing::symbol_spaced(3, 0);
        let corr = estimate_correlations(&noise, &s.samples, f).unwrap();
        let tol = 4.0 * (2.0 / n as f64).sqrt();
        assert!(corr.crosscorr.iter().all(|g| g.norm() < tol), "{:?}", corr.crosscorr);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(corr.autocorr[(i, j)], corr.autocorr[(j, i)].conj());
            }
        }
        assert!(matches!(
            estimate_correlations(&noise, &s.samples[..29], f),
            Err(Error::InsufficientTraining { needed: 30, got: 29 })
        ));
    }

    #[test]
    fn wiener_identity_and_linearity() {
        let corr = Correlations {
            autocorr: CMatrix::identity(3, 3),
            crosscorr: vec![c(1.0), ZERO, ZERO],
            symbol_power: 1.0,
            count: 1,
        };
        let f = Framing::symbol_spaced(3, 0);
        let w = wiener_solve(&corr, f, 0.0).unwrap();
        assert_eq!(w.taps, vec![c(1.0), ZERO, ZERO]);

        let scaled = Correlations { crosscorr: vec![C64::new(2.0, -1.0), ZERO, ZERO], ..corr.clone() };
        let w2 = wiener_solve(&scaled, f, 0.0).unwrap();
        assert!((w2.taps[0] - C64::new(2.0, -1.0)).norm() < 1e-12);

        let singular = Correlations { autocorr: CMatrix::from_element(3, 3, c(1.0)), ..corr };
        assert!(matches!(wiener_solve(&singular, f, 0.0), Err(Error::Singular)));
        assert!(wiener_solve(&singular, f, 1e-3).is_ok());
    }

    /// Brute-force grid over real taps in a box around the rounded optimum.
    fn grid_min(corr: &Correlations, center: &[C64], half_steps: i32, step: f64) -> f64 {
        let n = center.len();
        let base: Vec<f64> = center.iter().map(|w| (w.re / step).round() * step).collect();
        let mut idx = vec![-half_steps; n];
        let mut best = f64::INFINITY;
        loop {
            let w: Vec<C64> = (0..n).map(|i| c(base[i] + idx[i] as f64 * step)).collect();
            best = best.min(corr.mse(&w));
            let mut i = 0;
            loop {
                if i == n {
                    return best;
                }
                idx[i] += 1;
                if idx[i] <= half_steps {
                    break;
                }
                idx[i] = -half_steps;
                i += 1;
            }
        }
    }

    #[test]
    fn wiener_beats_grid_on_two_tap_channel() {
        let s = SymbolStream::random(5_000, Modulation::Bpsk, Seed(6));
        let received = isi_received(&[1.0, 0.5], &s, 20.0, Seed(7));
        let f = Framing::symbol_spaced(5, -4);
        let corr = estimate_correlations(&received, &s.samples, f).unwrap();
        let w = wiener_solve(&corr, f, 0.0).unwrap();
        let closed = corr.mse(&w.taps);
        let grid = grid_min(&corr, &w.taps, 5, 0.05);
        assert!(closed <= grid, "closed {closed} grid {grid}");
    }

    #[test]
    fn matched_vs_linear_mud_on_correlated_users() {
        let n = 100_000;
        let ns = 4;
        let h = 0.5;
        let scene = MultiuserScene {
            symbols: vec![
                SymbolStream::random(n, Modulation::Bpsk, Seed(10)),
                SymbolStream::random(n, Modulation::Bpsk, Seed(11)),
            ],
            templates: vec![vec![c(h), c(h), c(h), c(h)], vec![c(h), c(h), c(h), c(-h)]],
            samples_per_symbol: ns,
            noise_ebn0_db: 15.0,
        };
        let sig = synth_multiuser(&scene, Seed(12)).unwrap();
        let bpsk = Modulation::Bpsk.scheme();
        let truth = &scene.symbols[0].samples;
        let (mf, mf_frame) = matched_filter(&scene.templates[0], ns);
        let mf_det = linear_detect(&sig.received, &mf, mf_frame, &bpsk, n, Some(truth)).unwrap();
        let eq = train_wiener(&sig.received, &truth[..2000], scene.framing(ns)).unwrap();
        let mud = linear_mud_detect(&sig.received, &eq, &bpsk, n, Some(truth)).unwrap();
        assert!(mud.ser().unwrap() < mf_det.ser().unwrap(), "mud {:?} mf {:?}", mud.ser(), mf_det.ser());
    }

    #[test]
    fn orthogonal_users_do_not_disturb_detection() {
        let n = 500;
        let templates = vec![vec![c(0.5), c(0.5), c(0.5), c(0.5)], vec![c(0.5), c(-0.5), c(0.5), c(-0.5)]];
        let user0 = SymbolStream::random(n, Modulation::Qam16, Seed(1));
        let run = |other: u64| {
            let scene = MultiuserScene {
                symbols: vec![user0.clone(), SymbolStream::random(n, Modulation::Qam16, Seed(other))],
                templates: templates.clone(),
                samples_per_symbol: 4,
                noise_ebn0_db: f64::INFINITY,
            };
            let sig = synth_multiuser(&scene, Seed(0)).unwrap();
            let (mf, frame) = matched_filter(&templates[0], 4);
            linear_detect(&sig.received, &mf, frame, &Modulation::Qam16.scheme(), n, Some(&user0.samples)).unwrap()
        };
        let a = run(2);
        let b = run(3);
        assert_eq!(a.symbols, b.symbols);
        assert_eq!(a.symbol_errors, Some(0));
    }

    #[test]
    fn dfe_zero_isi_has_no_feedback() {
        let s = SymbolStream::random(2_000, Modulation::Qam16, Seed(20));
        let eq = dfe_train(&s.samples, &s, Framing::symbol_spaced(2, 0), 2, 0.0).unwrap();
        let fb: f64 = eq.w_fb.iter().map(|w| w.norm_sqr()).sum::<f64>().sqrt();
        assert!(fb <= 1e-6, "{fb}");
    }

    #[test]
    fn dfe_beats_linear_on_isi_channel() {
        let n = 20_000;
        let s = SymbolStream::random(n, Modulation::Bpsk, Seed(21));
        let received = isi_received(&[1.0, 0.6], &s, 15.0, Seed(22));
        let bpsk = Modulation::Bpsk.scheme();
        let mut dfe = dfe_train(&received, &s, Framing::symbol_spaced(3, 0), 1, 0.0).unwrap();
        let dfe_det = dfe_detect(&received, &mut dfe, n, Some(&s.samples)).unwrap();
        let best_linear = (-3..=0)
            .map(|off| {
                let eq = train_wiener(&received, &s.samples, Framing::symbol_spaced(4, off)).unwrap();
                linear_mud_detect(&received, &eq, &bpsk, n, Some(&s.samples)).unwrap().mse
            })
            .fold(f64::INFINITY, f64::min);
        assert!(dfe_det.mse <= best_linear, "dfe {} linear {}", dfe_det.mse, best_linear);
    }

    #[test]
    fn dfe_noiseless_isi_error_free_and_matches_training_outputs() {
        let n = 10_000;
        let s = SymbolStream::random(n, Modulation::Qam16, Seed(23));
        let received = isi_received(&[1.0, 0.6], &s, f64::INFINITY, Seed(0));
        let mut dfe = dfe_train(&received, &s, Framing::symbol_spaced(2, 0), 1, 0.0).unwrap();
        let trained = dfe_training_outputs(&received, &dfe, &s.samples);
        let det = dfe_detect(&received, &mut dfe, n, Some(&s.samples)).unwrap();
        assert_eq!(det.symbol_errors, Some(0));
        assert_eq!(det.outputs, trained);
    }

    #[test]
    fn dfe_without_feedback_is_linear() {
        let s = SymbolStream::random(3_000, Modulation::Bpsk, Seed(24));
        let received = isi_received(&[1.0, 0.4], &s, 12.0, Seed(25));
        let f = Framing::symbol_spaced(3, 0);
        let mut dfe = dfe_train(&received, &s, f, 0, 0.0).unwrap();
        let lin = linear_detect(&received, &dfe.w_ff.clone(), f, &Modulation::Bpsk.scheme(), 3_000, None).unwrap();
        let det = dfe_detect(&received, &mut dfe, 3_000, None).unwrap();
        assert_eq!(det.outputs, lin.outputs);
        assert_eq!(det.symbols, lin.symbols);
    }

    #[test]
    fn dfe_history_advances_one_decision_per_symbol() {
        let scheme = Modulation::Bpsk.scheme();
        let mut eq = DfeEqualizer::new(vec![c(1.0)], vec![ZERO; 3], Framing::symbol_spaced(1, 0), scheme).unwrap();
        let inputs = [0.9, -1.2, 0.3, -0.1, 2.0];
        for (k, &x) in inputs.iter().enumerate() {
            eq.step(&[c(x)]);
            assert_eq!(eq.history().len(), 3);
            assert_eq!(eq.history()[0], c(if x >= 0.0 { 1.0 } else { -1.0 }), "step {k}");
        }
        assert_eq!(eq.history(), &[c(1.0), c(-1.0), c(1.0)]);
    }

    #[test]
    fn dispersion_constants() {
        assert!((dispersion_constant(&Modulation::Bpsk.scheme()) - 1.0).abs() < 1e-12);
        // 16 points at |a|² ∈ {0.2 ×4, 1.0 ×8, 1.8 ×4}
        let expected16 = (4.0 * 0.04 + 8.0 * 1.0 + 4.0 * 3.24) / 16.0;
        assert!((expected16 - 1.32_f64).abs() < 1e-12);
        assert!((dispersion_constant(&Modulation::Qam16.scheme()) - 1.32).abs() < 1e-12);
        assert!((dispersion_constant(&Modulation::Qam8.scheme()) - 52.0 / 36.0).abs() < 1e-12);
    }

    #[test]
    fn dispersion_scales_quadratically() {
        let s = Modulation::Qam16.scheme();
        let scale = 1.7;
        let pts: Vec<C64> = s.points().iter().map(|p| p * scale).collect();
        let m2: f64 = pts.iter().map(|p| p.norm_sqr()).sum();
        let m4: f64 = pts.iter().map(|p| p.norm_sqr().powi(2)).sum();
        assert!((m4 / m2 - scale * scale * dispersion_constant(&s)).abs() < 1e-12);
    }

    #[test]
    fn cma_update_vanishes_on_modulus_circle_and_zero_step() {
        let mut rng = Seed(0).rng();
        let mut eq = CmaEqualizer::center_spike(3, 0.01, 1.0, CmaVariant::Cma).unwrap();
        let before = eq.taps.clone();
        let r = [c(0.3), C64::new(0.6, 0.8), c(-0.2)];
        let y = cma_step(&mut eq, &r, &mut rng).unwrap();
        assert!((y.norm_sqr() - 1.0).abs() < 1e-12);
        assert_eq!(eq.taps, before);

        let mut eq = CmaEqualizer::center_spike(3, 0.0, 1.32, CmaVariant::DseCma).unwrap();
        cma_step(&mut eq, &[c(0.1), c(2.0), c(0.4)], &mut rng).unwrap();
        assert_eq!(eq.taps, before);
        assert!(CmaEqualizer::center_spike(4, 0.1, 1.0, CmaVariant::Cma).is_err());
    }

    #[test]
    fn dse_cma_update_bounded() {
        let mut rng = Seed(5).rng();
        let mut eq = CmaEqualizer::center_spike(5, 0.002, 1.32, CmaVariant::DseCma).unwrap();
        let x = SymbolStream::random(2_000, Modulation::Qam16, Seed(6)).samples;
        for n in 4..x.len() {
            let r: Vec<C64> = (0..5).map(|j| x[n - j]).collect();
            let before = eq.taps.clone();
            cma_step(&mut eq, &r, &mut rng).unwrap();
            let df: f64 = eq.taps.iter().zip(&before).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            let rn: f64 = r.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            assert!(df <= eq.step * eq.dither_amplitude * 2f64.sqrt() * rn * (1.0 + 1e-12));
        }
    }

    #[test]
    fn cma_identity_channel_stays_converged() {
        let s = SymbolStream::random(4_000, Modulation::Qam8, Seed(30));
        let r2 = dispersion_constant(&Modulation::Qam8.scheme());
        let eq = CmaEqualizer::center_spike(11, 0.0006, r2, CmaVariant::Cma).unwrap();
        let run = run_blind(&s.samples, eq, 2_000, 200, Seed(1), Some(&s.samples)).unwrap();
        assert_eq!(run.delay, Some(5));
        // CMA misadjustment on a non-constant-modulus constellation
        assert!(run.final_mse() < 1e-2, "{}", run.final_mse());
    }

    #[test]
    fn cma_converges_on_mild_channel() {
        let s = SymbolStream::random(25_000, Modulation::Qam16, Seed(31));
        let received = isi_received(&[1.0, 0.5, 0.2], &s, 30.0, Seed(32));
        let r2 = dispersion_constant(&Modulation::Qam16.scheme());
        let eq = CmaEqualizer::center_spike(11, 0.0003, r2, CmaVariant::Cma).unwrap();
        let run = run_blind(&received, eq, 20_000, 500, Seed(2), Some(&s.samples)).unwrap();
        assert!(run.improvement_db() >= 10.0, "{}", run.improvement_db());
    }

    #[test]
    fn cma_zero_step_keeps_trace_flat() {
        let s = SymbolStream::random(3_000, Modulation::Qam16, Seed(33));
        let received = isi_received(&[1.0, 0.5, 0.2], &s, 30.0, Seed(34));
        let eq = CmaEqualizer::center_spike(11, 0.0, 1.32, CmaVariant::Cma).unwrap();
        let run = run_blind(&received, eq.clone(), 2_500, 500, Seed(2), Some(&s.samples)).unwrap();
        assert_eq!(run.equalizer.taps, eq.taps);
        assert!(run.improvement_db().abs() < 0.5);
    }

    #[test]
    fn cma_large_step_diverges() {
        let s = SymbolStream::random(5_000, Modulation::Qam16, Seed(35));
        let received = isi_received(&REFERENCE_CHANNEL, &s, 30.0, Seed(36));
        let eq = CmaEqualizer::center_spike(11, 0.05, 1.32, CmaVariant::Cma).unwrap();
        let err = run_blind(&received, eq, 4_000, 100, Seed(3), Some(&s.samples)).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn csv_dumps() {
        let mut buf = Vec::new();
        write_taps_csv(&[c(1.0), C64::new(0.0, -0.5)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("index,re,im"));
        assert_eq!(text.lines().count(), 3);
        let mut buf = Vec::new();
        write_mse_csv(&[0.5, 0.25], &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("iteration,mse\n0,5.000000000e-1\n"));
    }
}
