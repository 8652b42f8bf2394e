//! Multipath propagation with exponential tap fading and AWGN.
//!
//! A channel is a short list of taps `(alpha_l, tau_l)` with delays measured
//! in symbol periods (units of `1/f`). Gains follow the fading law
//! `alpha_l = e^{-gamma tau_l}`; in the time-varying mode `gamma` is redrawn
//! uniformly per frame and held constant within it. Noise is injected on the
//! channel output, before the matched filter.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::waveform::SampledSignal;
use crate::{Error, Result};

/// One propagation path: linear gain and delay in units of `1/f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathTap {
    pub gain: f64,
    pub delay: f64,
}

/// Ordered multipath taps. The first tap is the timing reference.
#[derive(Debug, Clone, PartialEq)]
pub struct MultipathChannel {
    taps: Vec<PathTap>,
}

impl MultipathChannel {
    pub fn new(taps: Vec<PathTap>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::InvalidInput("channel needs at least one tap".into()));
        }
        if taps[0].delay != 0.0 {
            return Err(Error::InvalidInput(format!(
                "reference tap must have zero delay, got {}",
                taps[0].delay
            )));
        }
        if !(taps[0].gain > 0.0) {
            return Err(Error::InvalidInput(format!(
                "reference tap gain must be positive, got {}",
                taps[0].gain
            )));
        }
        for pair in taps.windows(2) {
            if !(pair[1].delay > pair[0].delay) {
                return Err(Error::InvalidInput(format!(
                    "tap delays must be strictly increasing, got {} then {}",
                    pair[0].delay, pair[1].delay
                )));
            }
        }
        if let Some(bad) = taps.iter().find(|t| !t.gain.is_finite()) {
            return Err(Error::InvalidInput(format!("tap gain {} is not finite", bad.gain)));
        }
        Ok(Self { taps })
    }

    /// Single direct path with unit gain.
    pub fn identity() -> Self {
        Self { taps: vec![PathTap { gain: 1.0, delay: 0.0 }] }
    }

    pub fn taps(&self) -> &[PathTap] {
        &self.taps
    }

    /// Path count `L`.
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Exponential fading `alpha = e^{-gamma tau}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FadingLaw {
    gamma: f64,
}

impl FadingLaw {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidInput(format!(
                "damping coefficient must be positive, got {gamma}"
            )));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn gain(&self, delay: f64) -> f64 {
        (-self.gamma * delay).exp()
    }
}

/// Noise level for a run: either exactly noise-free or an Eb/N0 point in dB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    NoiseFree,
    EbN0Db(f64),
}

impl NoiseSpec {
    pub fn new_db(ebn0_db: f64) -> Result<Self> {
        if !ebn0_db.is_finite() {
            return Err(Error::InvalidInput(format!("Eb/N0 must be finite, got {ebn0_db}")));
        }
        Ok(NoiseSpec::EbN0Db(ebn0_db))
    }
}

/// Per-frame uniform draw bounds for the fading coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeVaryingSpec {
    pub gamma_low: f64,
    pub gamma_high: f64,
}

impl TimeVaryingSpec {
    pub fn new(gamma_low: f64, gamma_high: f64) -> Result<Self> {
        if !(gamma_low > 0.0) || !(gamma_high >= gamma_low) || !gamma_high.is_finite() {
            return Err(Error::InvalidInput(format!(
                "need 0 < gamma_low <= gamma_high, got [{gamma_low}, {gamma_high}]"
            )));
        }
        Ok(Self { gamma_low, gamma_high })
    }
}

/// Evenly symbol-spaced delays `0, 1, .., L-1`, the default layout for the
/// multipath experiments.
pub fn default_delays(l: usize) -> Vec<f64> {
    (0..l).map(|k| k as f64).collect()
}

/// Builds an `L`-path channel with gains `e^{-gamma tau_l}` at the given
/// delays.
pub fn channel_from_fading(l: usize, law: FadingLaw, delays: &[f64]) -> Result<MultipathChannel> {
    if l == 0 {
        return Err(Error::InvalidInput("path count must be at least 1".into()));
    }
    if delays.len() != l {
        return Err(Error::InvalidInput(format!(
            "path count {l} does not match {} delays",
            delays.len()
        )));
    }
    MultipathChannel::new(
        delays.iter().map(|&d| PathTap { gain: law.gain(d), delay: d }).collect(),
    )
}

fn delay_in_samples(tap: &PathTap, oversampling: usize) -> Result<usize> {
    let exact = tap.delay * oversampling as f64;
    let rounded = exact.round();
    if (exact - rounded).abs() > 1e-9 || rounded < 0.0 {
        return Err(Error::InvalidInput(format!(
            "tap delay {} is not representable on the sample grid (oversampling {})",
            tap.delay, oversampling
        )));
    }
    Ok(rounded as usize)
}

/// Propagates a signal through the channel:
/// `output(k) = sum_l alpha_l signal(k - tau_l N_s)`.
///
/// Output length and alignment match the input; the delayed copies are
/// zero-padded at the front and truncated at the back.
pub fn apply_multipath(signal: &SampledSignal, channel: &MultipathChannel) -> Result<SampledSignal> {
    let n_s = signal.oversampling;
    let n = signal.samples.len();
    let mut out = vec![0.0; n];
    for tap in channel.taps() {
        let shift = delay_in_samples(tap, n_s)?;
        if shift >= n {
            continue;
        }
        for k in shift..n {
            out[k] += tap.gain * signal.samples[k - shift];
        }
    }
    Ok(SampledSignal {
        samples: out,
        oversampling: n_s,
        origin_offset: signal.origin_offset,
    })
}

/// Noise variance per sample for a given Eb/N0 point.
///
/// With noise density `N0 = Eb / 10^{ebn0/10}` and sample rate `f N_s`, each
/// discrete sample carries `sigma^2 = N0 f N_s / 2`.
pub fn noise_variance(spec: &NoiseSpec, energy_per_bit: f64, f: f64, oversampling: usize) -> f64 {
    match spec {
        NoiseSpec::NoiseFree => 0.0,
        NoiseSpec::EbN0Db(db) => {
            let ratio = 10f64.powf(db / 10.0);
            (energy_per_bit / ratio) * (f * oversampling as f64 / 2.0)
        }
    }
}

/// Adds white Gaussian noise at the requested Eb/N0. The noise-free spec
/// returns the input unchanged (and consumes no randomness).
pub fn add_awgn<R: Rng + ?Sized>(
    signal: &SampledSignal,
    spec: &NoiseSpec,
    energy_per_bit: f64,
    f: f64,
    rng: &mut R,
) -> Result<SampledSignal> {
    if let NoiseSpec::NoiseFree = spec {
        return Ok(signal.clone());
    }
    if !(energy_per_bit > 0.0) {
        return Err(Error::InvalidInput(format!(
            "energy per bit must be positive, got {energy_per_bit}"
        )));
    }
    let sigma2 = noise_variance(spec, energy_per_bit, f, signal.oversampling);
    let normal = Normal::new(0.0, sigma2.sqrt())
        .map_err(|e| Error::InvalidInput(format!("bad noise parameters: {e}")))?;
    Ok(SampledSignal {
        samples: signal.samples.iter().map(|&x| x + normal.sample(rng)).collect(),
        oversampling: signal.oversampling,
        origin_offset: signal.origin_offset,
    })
}

/// Average transmitted energy per bit of a sampled waveform,
/// `dt sum x^2 / n_bits`.
pub fn energy_per_bit(signal: &SampledSignal, f: f64, n_bits: usize) -> Result<f64> {
    if n_bits == 0 {
        return Err(Error::InvalidInput("energy per bit needs at least one bit".into()));
    }
    let dt = 1.0 / (f * signal.oversampling as f64);
    let e: f64 = signal.samples.iter().map(|x| x * x).sum();
    Ok(e * dt / n_bits as f64)
}

/// Draws this frame's fading coefficient uniformly from the configured range.
pub fn draw_frame_gamma<R: Rng + ?Sized>(spec: &TimeVaryingSpec, rng: &mut R) -> f64 {
    if spec.gamma_low == spec.gamma_high {
        return spec.gamma_low;
    }
    rng.gen_range(spec.gamma_low..=spec.gamma_high)
}
