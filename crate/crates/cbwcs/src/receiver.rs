//! The five competing detectors and least-squares channel estimation.
//!
//! All detectors share one primitive: `s_hat = sgn(y_max - theta)` on a
//! symbol window's decision sample. They differ only in where `theta` comes
//! from:
//!
//! * `zero` uses 0,
//! * `suboptimal` assembles the past-symbol interference from decoded bits,
//! * `method1` runs a scalar reservoir over the sample stream, recursively
//!   predicts eight samples ahead to guess the next symbol's sign, and adds
//!   that single future term to the past interference,
//! * `method2` predicts the whole threshold in one shot from the window via
//!   the trained 16-input reservoir (no channel knowledge at decode time),
//! * `mmse` ignores thresholds and instead linearly equalizes the
//!   decision-sample stream before zero-threshold decoding.
//!
//! Channel knowledge, where needed, comes from [`ls_channel_estimate`],
//! which fits a dense sample-spaced FIR tap vector to a received pilot by
//! normal equations and prunes near-zero taps.

use std::collections::VecDeque;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::channel::MultipathChannel;
use crate::esn::{predict_threshold, readout, update_state, EsnState, EsnWeights};
use crate::threshold::{
    decision_scale, one_future_threshold, suboptimal_threshold, IsiTable,
};
use crate::waveform::{sampled_basis_pulse, CsfParams, SampledSignal, SymbolSequence, SymbolWindow};
use crate::{Error, Result};

/// One estimated channel tap on the sample grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatedTap {
    pub gain: f64,
    pub delay_samples: usize,
}

/// Least-squares channel estimate: surviving taps sorted by delay plus the
/// normalized fit residual of the dense solution.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub taps: Vec<EstimatedTap>,
    pub residual: f64,
    pub oversampling: usize,
}

impl ChannelEstimate {
    /// Exact conversion from a known channel (the known-channel scenarios
    /// feed the same interfaces the estimator feeds).
    pub fn from_channel(channel: &MultipathChannel, oversampling: usize) -> Result<Self> {
        let mut taps = Vec::with_capacity(channel.len());
        for tap in channel.taps() {
            let exact = tap.delay * oversampling as f64;
            let rounded = exact.round();
            if (exact - rounded).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "tap delay {} is not on the sample grid",
                    tap.delay
                )));
            }
            taps.push(EstimatedTap { gain: tap.gain, delay_samples: rounded as usize });
        }
        Ok(Self { taps, residual: 0.0, oversampling })
    }

    /// Reinterprets the estimate as a multipath channel with delays in
    /// symbol periods. Requires a zero-delay reference tap with positive
    /// gain, like any physical channel here.
    pub fn to_channel(&self) -> Result<MultipathChannel> {
        let taps = self
            .taps
            .iter()
            .map(|t| crate::channel::PathTap {
                gain: t.gain,
                delay: t.delay_samples as f64 / self.oversampling as f64,
            })
            .collect();
        MultipathChannel::new(taps)
    }
}

/// Tag for the five compared detection pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DetectionMethod {
    Zero,
    Suboptimal,
    Method1,
    Method2,
    Mmse,
}

impl DetectionMethod {
    pub const ALL: [DetectionMethod; 5] = [
        DetectionMethod::Zero,
        DetectionMethod::Suboptimal,
        DetectionMethod::Method1,
        DetectionMethod::Method2,
        DetectionMethod::Mmse,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            DetectionMethod::Zero => "zero",
            DetectionMethod::Suboptimal => "suboptimal",
            DetectionMethod::Method1 => "method1",
            DetectionMethod::Method2 => "method2",
            DetectionMethod::Mmse => "mmse",
        }
    }
}

impl std::fmt::Display for DetectionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for DetectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(DetectionMethod::Zero),
            "suboptimal" => Ok(DetectionMethod::Suboptimal),
            "method1" => Ok(DetectionMethod::Method1),
            "method2" => Ok(DetectionMethod::Method2),
            "mmse" => Ok(DetectionMethod::Mmse),
            other => Err(Error::InvalidInput(format!(
                "unknown method '{other}' (expected zero, suboptimal, method1, method2, or mmse)"
            ))),
        }
    }
}

/// Symbol-spaced linear equalizer, center-referenced.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualizerTaps {
    pub coefficients: Vec<f64>,
}

impl EqualizerTaps {
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn center(&self) -> usize {
        self.coefficients.len() / 2
    }
}

/// Hard decision on a window: `+1` if the decision sample clears the
/// threshold, `-1` below it. An exact tie decides `+1`.
pub fn decode_symbol(window: &SymbolWindow, theta: f64) -> i8 {
    if window.decision_sample() - theta >= 0.0 {
        1
    } else {
        -1
    }
}

/// Fits `received ~= sum_d h_d pilot[. - d]` over `d = 0..=max_delay` by
/// normal equations, then prunes taps below 5% of the largest magnitude.
///
/// Both signals must share length and sample rate and be frame-aligned; the
/// caller restricts them to the pilot region.
pub fn ls_channel_estimate(
    pilot: &SampledSignal,
    received: &SampledSignal,
    max_delay: usize,
) -> Result<ChannelEstimate> {
    if pilot.samples.len() != received.samples.len() {
        return Err(Error::InvalidInput(format!(
            "pilot has {} samples, received has {}",
            pilot.samples.len(),
            received.samples.len()
        )));
    }
    if pilot.oversampling != received.oversampling {
        return Err(Error::InvalidInput("pilot and received sample rates differ".into()));
    }
    let p = &pilot.samples;
    let r = &received.samples;
    let len = p.len();
    let d = max_delay + 1;
    if len <= d {
        return Err(Error::InvalidInput(format!(
            "{len} samples cannot support {d} delay taps"
        )));
    }
    // Gram entry (a, b), b >= a: sum_i p[i] p[i + b - a] over i < len - b.
    let mut gram = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in a..d {
            let lag = b - a;
            let mut s = 0.0;
            for i in 0..len - b {
                s += p[i] * p[i + lag];
            }
            gram[(a, b)] = s;
            gram[(b, a)] = s;
        }
    }
    let mut rhs = DVector::zeros(d);
    for a in 0..d {
        let mut s = 0.0;
        for k in a..len {
            s += p[k - a] * r[k];
        }
        rhs[a] = s;
    }
    let chol = Cholesky::new(gram).ok_or_else(|| {
        Error::EstimationFailed("pilot correlation matrix is rank deficient".into())
    })?;
    let h = chol.solve(&rhs);
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::EstimationFailed("tap solution is not finite".into()));
    }
    // Normalized residual of the dense (unpruned) fit.
    let mut fit_err = 0.0;
    let mut r_energy = 0.0;
    for k in 0..len {
        let mut fitted = 0.0;
        for delay in 0..d.min(k + 1) {
            fitted += h[delay] * p[k - delay];
        }
        let e = r[k] - fitted;
        fit_err += e * e;
        r_energy += r[k] * r[k];
    }
    let residual = if r_energy > 0.0 { (fit_err / r_energy).sqrt() } else { 0.0 };
    let h_max = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let taps = (0..d)
        .filter(|&delay| h[delay].abs() >= 0.05 * h_max && h[delay] != 0.0)
        .map(|delay| EstimatedTap { gain: h[delay], delay_samples: delay })
        .collect();
    Ok(ChannelEstimate { taps, residual, oversampling: pilot.oversampling })
}

/// Designs the symbol-spaced linear MMSE equalizer
/// `w = (H' H + sigma^2 I)^{-1} H' e_center` for the estimated channel's
/// convolution matrix `H` and the centered decision delay.
///
/// The estimate's sample-grid taps are folded to their nearest symbol lag;
/// `noise_variance` is the decision-sample noise power relative to a
/// unit-gain symbol. Requires an odd tap count.
pub fn mmse_equalizer_design(
    estimate: &ChannelEstimate,
    noise_variance: f64,
    n_taps: usize,
) -> Result<EqualizerTaps> {
    if n_taps == 0 || n_taps % 2 == 0 {
        return Err(Error::InvalidInput(format!(
            "equalizer needs an odd tap count, got {n_taps}"
        )));
    }
    if estimate.taps.is_empty() {
        return Err(Error::DesignFailed("channel estimate has no taps".into()));
    }
    if noise_variance < 0.0 {
        return Err(Error::InvalidInput(format!("negative noise variance {noise_variance}")));
    }
    let n_s = estimate.oversampling as f64;
    let max_lag = estimate
        .taps
        .iter()
        .map(|t| (t.delay_samples as f64 / n_s).round() as usize)
        .max()
        .unwrap_or(0);
    let mut h = vec![0.0; max_lag + 1];
    for t in &estimate.taps {
        let lag = (t.delay_samples as f64 / n_s).round() as usize;
        h[lag] += t.gain;
    }
    // Convolution matrix: rows are composite lags, columns equalizer taps.
    let rows = n_taps + max_lag;
    let mut conv = DMatrix::zeros(rows, n_taps);
    for j in 0..n_taps {
        for (lag, &hv) in h.iter().enumerate() {
            conv[(j + lag, j)] = hv;
        }
    }
    let mut gram = conv.transpose() * &conv;
    for i in 0..n_taps {
        gram[(i, i)] += noise_variance;
    }
    // Unit target at composite lag zero through the center tap.
    let mut target = DVector::zeros(rows);
    target[(n_taps - 1) / 2] = 1.0;
    let rhs = conv.transpose() * target;
    let chol = Cholesky::new(gram)
        .ok_or_else(|| Error::DesignFailed("equalizer design matrix is singular".into()))?;
    let w = chol.solve(&rhs);
    Ok(EqualizerTaps { coefficients: w.iter().copied().collect() })
}

/// Noise variance of a decision sample given the per-sample channel noise
/// variance: the matched filter integrates white noise over the pulse, and
/// the output is rescaled to decision units.
pub fn decision_noise_variance(
    sample_variance: f64,
    params: &CsfParams,
    oversampling: usize,
    guard_symbols: usize,
) -> f64 {
    let dt = params.dt(oversampling);
    let pulse = sampled_basis_pulse(params, oversampling, guard_symbols);
    let pulse_energy: f64 = pulse.iter().map(|v| v * v).sum::<f64>() * dt;
    let scale = decision_scale(params);
    scale * scale * sample_variance * dt * pulse_energy
}

/// Per-method decode-time context. The variant carries exactly what the
/// method may consult; notably the one-shot predictor has no channel member.
#[derive(Debug, Clone)]
pub enum DetectionContext<'a> {
    /// Fixed zero threshold.
    Zero,
    /// Past-only interference from decision feedback.
    Suboptimal { table: &'a IsiTable },
    /// Scalar sample predictor plus past interference. `initial` is the
    /// reservoir state after teacher-forcing through the pilot samples.
    Method1 { esn: &'a EsnWeights, table: &'a IsiTable, initial: &'a EsnState },
    /// One-shot threshold predictor. `initial` is the reservoir state after
    /// the teacher-forced pilot pass.
    Method2 { esn: &'a EsnWeights, initial: &'a EsnState },
    /// Linear equalizer over the decision-sample stream.
    Mmse { equalizer: &'a EqualizerTaps },
}

impl DetectionContext<'_> {
    fn method(&self) -> DetectionMethod {
        match self {
            DetectionContext::Zero => DetectionMethod::Zero,
            DetectionContext::Suboptimal { .. } => DetectionMethod::Suboptimal,
            DetectionContext::Method1 { .. } => DetectionMethod::Method1,
            DetectionContext::Method2 { .. } => DetectionMethod::Method2,
            DetectionContext::Mmse { .. } => DetectionMethod::Mmse,
        }
    }
}

fn push_history(history: &mut VecDeque<i8>, bit: i8) {
    history.pop_front();
    history.push_back(bit);
}

fn history_window(history: &VecDeque<i8>) -> Vec<i8> {
    history.iter().copied().collect()
}

/// Decodes a frame of symbol windows with the chosen method.
///
/// Decision feedback (suboptimal, method1) starts from zero-padded history,
/// matching the threshold module's boundary convention. The windows must be
/// consecutive: method1 treats their concatenation as the contiguous
/// matched-filter sample stream.
pub fn detect_frame(
    windows: &[SymbolWindow],
    method: DetectionMethod,
    context: &DetectionContext,
) -> Result<SymbolSequence> {
    if context.method() != method {
        return Err(Error::Misconfigured(format!(
            "method {method} called with a {} context",
            context.method()
        )));
    }
    let decoded = match context {
        DetectionContext::Zero => windows.iter().map(|w| decode_symbol(w, 0.0)).collect(),
        DetectionContext::Suboptimal { table } => {
            let mut history: VecDeque<i8> = std::iter::repeat(0).take(table.past_depth()).collect();
            let mut out = Vec::with_capacity(windows.len());
            for w in windows {
                let theta = suboptimal_threshold(&history_window(&history), table)?;
                let bit = decode_symbol(w, theta);
                push_history(&mut history, bit);
                out.push(bit);
            }
            out
        }
        DetectionContext::Method1 { esn, table, initial } => {
            if esn.k() != 1 {
                return Err(Error::Misconfigured(format!(
                    "method1 needs a scalar-input reservoir, got K = {}",
                    esn.k()
                )));
            }
            if !esn.is_trained() {
                return Err(Error::NotTrained);
            }
            let mut history: VecDeque<i8> = std::iter::repeat(0).take(table.past_depth()).collect();
            let mut state = (*initial).clone();
            let mut out = Vec::with_capacity(windows.len());
            let mut u = DVector::zeros(1);
            for w in windows {
                // Teacher-force the reservoir through this window's samples;
                // the fed-back "output" for a sample stream is the sample
                // itself (one-step-ahead training convention).
                for &v in &w.values {
                    u[0] = v;
                    state = update_state(&state, &u, v, esn)?;
                }
                // Eight recursive free-run predictions; the eighth lands on
                // the next symbol's decision sample.
                let mut free = state.clone();
                let mut prev = *w.values.last().expect("windows are non-empty");
                u[0] = prev;
                let mut pred = readout(&free, &u, esn)?;
                for _ in 1..8 {
                    prev = pred;
                    u[0] = prev;
                    free = update_state(&free, &u, prev, esn)?;
                    pred = readout(&free, &u, esn)?;
                }
                let future_bit: i8 = if pred >= 0.0 { 1 } else { -1 };
                let theta = one_future_threshold(&history_window(&history), future_bit, table)?;
                let bit = decode_symbol(w, theta);
                push_history(&mut history, bit);
                out.push(bit);
            }
            out
        }
        DetectionContext::Method2 { esn, initial } => {
            if !esn.is_trained() {
                return Err(Error::NotTrained);
            }
            let mut state = (*initial).clone();
            let mut out = Vec::with_capacity(windows.len());
            for w in windows {
                if w.values.len() != esn.k() {
                    return Err(Error::Misconfigured(format!(
                        "method2 reservoir expects {} inputs, window has {}",
                        esn.k(),
                        w.values.len()
                    )));
                }
                let u = DVector::from_row_slice(&w.values);
                let (theta, next) = predict_threshold(&state, &u, esn)?;
                state = next;
                out.push(decode_symbol(w, theta));
            }
            out
        }
        DetectionContext::Mmse { equalizer } => {
            let y: Vec<f64> = windows.iter().map(|w| w.decision_sample()).collect();
            let c = equalizer.center() as i64;
            let mut out = Vec::with_capacity(windows.len());
            for n in 0..y.len() as i64 {
                let mut acc = 0.0;
                for (j, &wj) in equalizer.coefficients.iter().enumerate() {
                    let idx = n - (j as i64 - c);
                    if idx >= 0 && (idx as usize) < y.len() {
                        acc += wj * y[idx as usize];
                    }
                }
                out.push(if acc >= 0.0 { 1 } else { -1 });
            }
            out
        }
    };
    SymbolSequence::new(decoded)
}
