//! Closed-form ISI coefficients and decoding thresholds.
//!
//! The matched-filter decision sample for symbol `n` is its own energy term
//! plus intersymbol interference: every neighbor `s_{n+i}` leaks
//! `alpha_l I_{l,i}` through path `l`, where `I_{l,i}` is the pulse
//! autocorrelation evaluated at the lag `tau_l + i/f` and scaled to decision
//! units. The optimal decoding threshold is the total interference
//! `theta = I_past + I_future`; the suboptimal threshold keeps only the past
//! (causally available) half, and the one-future variant adds back the
//! single dominant future term `i = 1`.
//!
//! The autocorrelation `R(v) = int p(u) p(u+v) du` is evaluated in closed
//! form from complex-exponential antiderivatives of the two pulse branches;
//! [`decision_scale`] converts raw correlation units into the decision-sample
//! units the thresholds are expressed in. Unit tests pin `R` against a
//! rectangle-rule integration of the pulse itself, so the closed form and the
//! waveform module cannot drift apart.

use nalgebra::Complex;

use crate::channel::{apply_multipath, MultipathChannel, PathTap};
use crate::waveform::{matched_filter_with_guard, synthesize_baseband, CsfParams, SymbolSequence};
use crate::{Error, Result};

/// Leading coefficients of the interference closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsiConstants {
    /// `(omega^2 - 3 beta^2) f / (4 beta (omega^2 + beta^2))`
    pub a: f64,
    /// `(3 omega^2 - beta^2) f / (4 omega (omega^2 + beta^2))`
    pub b: f64,
}

/// Computes the interference constants for the active pulse parameters.
pub fn isi_constants(params: &CsfParams) -> IsiConstants {
    let beta = params.beta();
    let w = params.omega();
    let f = params.f();
    let w2 = w * w;
    let b2 = beta * beta;
    IsiConstants {
        a: (w2 - 3.0 * b2) * f / (4.0 * beta * (w2 + b2)),
        b: (3.0 * w2 - b2) * f / (4.0 * w * (w2 + b2)),
    }
}

// Autocorrelation branch for lags past the pulse's active period
// (v >= 1/f): only the growing tail of one pulse overlaps the other.
fn autocorr_far(v: f64, params: &CsfParams) -> f64 {
    let beta = params.beta();
    let f = params.f();
    let w = params.omega();
    let z = Complex::new(beta, w);
    let d = Complex::new(1.0, beta / w);
    let abs_d2 = (d * d.conj()).re;
    let pre = 1.0 - (-beta / f).exp();
    let eb = (beta / f).exp();
    let ev = Complex::new(0.0, -w * v).exp();
    let e_bv = (-beta * v).exp();
    let t1 = (pre * pre / 4.0) * e_bv * ((d * d / z * ev).re + abs_d2 * (w * v).cos() / beta);
    let t2a = (pre / 2.0) * (eb - 1.0) * e_bv * 2.0 * (d / z * ev).re;
    let t2b = -(pre * eb / 2.0) * abs_d2 * e_bv * (w * v).cos() / f;
    t1 + t2a + t2b
}

// Autocorrelation branch for lags inside the active period (0 <= v < 1/f):
// tail-tail, tail-lobe, and lobe-lobe overlaps all contribute.
fn autocorr_near(v: f64, params: &CsfParams) -> f64 {
    let beta = params.beta();
    let f = params.f();
    let w = params.omega();
    let z = Complex::new(beta, w);
    let zb = z.conj();
    let d = Complex::new(1.0, beta / w);
    let abs_d2 = (d * d.conj()).re;
    let pre = 1.0 - (-beta / f).exp();
    let eb = (beta / f).exp();
    let one = Complex::new(1.0, 0.0);
    let ev = Complex::new(0.0, -w * v).exp();
    let e_bv = (-beta * v).exp();
    let t1 = (pre * pre / 4.0) * e_bv * ((d * d / z * ev).re + abs_d2 * (w * v).cos() / beta);
    let u2a = pre * (d / z * (one - ev * e_bv)).re;
    let i2 = (one - Complex::new(0.0, -2.0 * w * v).exp()) / Complex::new(0.0, 2.0 * w);
    let u2b = -(pre * eb / 4.0)
        * (2.0 * (d * d * ev.conj() * e_bv * i2).re + abs_d2 * 2.0 * e_bv * (w * v).cos() * v);
    let l = 1.0 / f - v;
    let u3a = l;
    let jzb = (one - (-zb * l).exp()) / zb;
    let u3b = -(eb / 2.0) * 2.0 * (d * ev.conj() * e_bv * jzb).re;
    let u3c = -(eb / 2.0) * 2.0 * (d * jzb).re;
    let k2zb = (one - (-zb * (2.0 * l)).exp()) / (zb * 2.0);
    let k2b = (1.0 - (-2.0 * beta * l).exp()) / (2.0 * beta);
    let u3d = (eb * eb / 4.0)
        * (2.0 * (d * d * ev.conj() * e_bv * k2zb).re + abs_d2 * 2.0 * e_bv * (w * v).cos() * k2b);
    t1 + u2a + u2b + u3a + u3b + u3c + u3d
}

/// Exact pulse autocorrelation `R(v) = int p(u) p(u+v) du`.
///
/// Symmetric in `v`; `R(0)` is the pulse energy. The lag `|v| = 1/f` is the
/// branch boundary and evaluates on the far branch; `R` is continuous there.
pub fn pulse_autocorrelation(v: f64, params: &CsfParams) -> f64 {
    let v = v.abs();
    if v >= 1.0 / params.f() {
        autocorr_far(v, params)
    } else {
        autocorr_near(v, params)
    }
}

/// Conversion from raw autocorrelation units to decision-sample units.
///
/// Anchored so that a unit-gain zero-delay path at offset `i = 1` yields the
/// reference coefficient `e^{-beta/f} (2 - e^{-beta/f} - e^{beta/f}) A`.
/// The receiver multiplies matched-filter outputs by this same factor, so
/// thresholds and decision samples share a scale and the interference
/// cancellation is exact.
pub fn decision_scale(params: &CsfParams) -> f64 {
    let beta = params.beta();
    let f = params.f();
    let a = isi_constants(params).a;
    let ebf = (beta / f).exp();
    let anchor = (2.0 - 1.0 / ebf - ebf) * a / ebf;
    anchor / pulse_autocorrelation(1.0 / f, params)
}

/// Truncation depths for the interference sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThresholdConfig {
    pub past_depth: usize,
    pub future_depth: usize,
}

impl ThresholdConfig {
    pub fn new(past_depth: usize, future_depth: usize) -> Result<Self> {
        if past_depth + future_depth == 0 {
            return Err(Error::InvalidInput(
                "threshold depths cannot both be zero".into(),
            ));
        }
        Ok(Self { past_depth, future_depth })
    }
}

impl Default for ThresholdConfig {
    /// Three past and three future symbols; interference decays like
    /// `e^{-beta |i|}`, so depth 3 captures all but a few percent.
    fn default() -> Self {
        Self { past_depth: 3, future_depth: 3 }
    }
}

/// Precomputed interference coefficients `I_{l,i}` for
/// `l in [0, L)`, `i in [-P, F] \ {0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsiTable {
    entries: Vec<f64>,
    n_paths: usize,
    past_depth: usize,
    future_depth: usize,
}

impl IsiTable {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn past_depth(&self) -> usize {
        self.past_depth
    }

    pub fn future_depth(&self) -> usize {
        self.future_depth
    }

    fn slot(&self, l: usize, i: i64) -> usize {
        let p = self.past_depth as i64;
        let col = if i < 0 { i + p } else { i + p - 1 } as usize;
        l * (self.past_depth + self.future_depth) + col
    }

    /// Coefficient for path `l` and symbol offset `i`.
    pub fn get(&self, l: usize, i: i64) -> Result<f64> {
        if i == 0 {
            return Err(Error::InvalidInput("symbol offset 0 is the decision symbol itself".into()));
        }
        if l >= self.n_paths || i < -(self.past_depth as i64) || i > self.future_depth as i64 {
            return Err(Error::InvalidInput(format!(
                "({l}, {i}) outside table of {} paths, depths -{}..{}",
                self.n_paths, self.past_depth, self.future_depth
            )));
        }
        Ok(self.entries[self.slot(l, i)])
    }

    /// `sum_l I_{l,i}`, the total leakage from offset `i` across all paths.
    pub fn path_sum(&self, i: i64) -> Result<f64> {
        let mut s = 0.0;
        for l in 0..self.n_paths {
            s += self.get(l, i)?;
        }
        Ok(s)
    }
}

/// Interference coefficient `I_{l,i} = alpha_l scale R(tau_l + i/f)` in
/// decision-sample units.
pub fn isi_coefficient(
    l: usize,
    i: i64,
    channel: &MultipathChannel,
    params: &CsfParams,
) -> Result<f64> {
    if i == 0 {
        return Err(Error::InvalidInput(
            "offset 0 is the decision symbol, not interference".into(),
        ));
    }
    let tap = channel.taps().get(l).ok_or_else(|| {
        Error::InvalidInput(format!("path index {l} outside channel with {} taps", channel.len()))
    })?;
    // Delays are stored in symbol periods; the lag argument is in time.
    let v = (tap.delay + i as f64) / params.f();
    Ok(tap.gain * decision_scale(params) * pulse_autocorrelation(v, params))
}

/// Builds the full coefficient table for a channel at the given depths.
pub fn build_isi_table(
    channel: &MultipathChannel,
    params: &CsfParams,
    config: &ThresholdConfig,
) -> Result<IsiTable> {
    let p = config.past_depth;
    let f = config.future_depth;
    if p + f == 0 {
        return Err(Error::InvalidInput("threshold depths cannot both be zero".into()));
    }
    let scale = decision_scale(params);
    let mut entries = Vec::with_capacity(channel.len() * (p + f));
    for tap in channel.taps() {
        for i in -(p as i64)..=(f as i64) {
            if i == 0 {
                continue;
            }
            let v = (tap.delay + i as f64) / params.f();
            entries.push(tap.gain * scale * pulse_autocorrelation(v, params));
        }
    }
    Ok(IsiTable { entries, n_paths: channel.len(), past_depth: p, future_depth: f })
}

fn check_symbols(name: &str, got: &[i8], want: usize) -> Result<()> {
    if got.len() != want {
        return Err(Error::InvalidInput(format!(
            "{name} window has {} symbols, table expects {want}",
            got.len()
        )));
    }
    if let Some(bad) = got.iter().find(|&&s| s != -1 && s != 0 && s != 1) {
        return Err(Error::InvalidInput(format!(
            "{name} symbols must be -1, 0 (padding), or +1, got {bad}"
        )));
    }
    Ok(())
}

/// Optimal decoding threshold `theta = I_past + I_future`.
///
/// `past` holds `s_{n-P} .. s_{n-1}` in time order, `future` holds
/// `s_{n+1} .. s_{n+F}`. Zeros mark padded positions beyond the frame.
pub fn optimal_threshold(past: &[i8], future: &[i8], table: &IsiTable) -> Result<f64> {
    check_symbols("past", past, table.past_depth)?;
    check_symbols("future", future, table.future_depth)?;
    let p = table.past_depth as i64;
    let mut theta = 0.0;
    for l in 0..table.n_paths {
        for (k, &s) in past.iter().enumerate() {
            if s != 0 {
                theta += s as f64 * table.entries[table.slot(l, k as i64 - p)];
            }
        }
        for (k, &s) in future.iter().enumerate() {
            if s != 0 {
                theta += s as f64 * table.entries[table.slot(l, k as i64 + 1)];
            }
        }
    }
    Ok(theta)
}

/// Causal threshold using only already-decoded past symbols.
pub fn suboptimal_threshold(past: &[i8], table: &IsiTable) -> Result<f64> {
    check_symbols("past", past, table.past_depth)?;
    let p = table.past_depth as i64;
    let mut theta = 0.0;
    for l in 0..table.n_paths {
        for (k, &s) in past.iter().enumerate() {
            if s != 0 {
                theta += s as f64 * table.entries[table.slot(l, k as i64 - p)];
            }
        }
    }
    Ok(theta)
}

/// Threshold from the past symbols plus the single next-symbol term.
pub fn one_future_threshold(past: &[i8], fut1: i8, table: &IsiTable) -> Result<f64> {
    if table.future_depth < 1 {
        return Err(Error::InvalidInput(
            "table has no future entries; need future depth >= 1".into(),
        ));
    }
    check_symbols("future", &[fut1], 1)?;
    let mut theta = suboptimal_threshold(past, table)?;
    if fut1 != 0 {
        for l in 0..table.n_paths {
            theta += fut1 as f64 * table.entries[table.slot(l, 1)];
        }
    }
    Ok(theta)
}

/// Optimal threshold for every symbol of a sequence, using the true
/// neighbors. Positions beyond either end are zero-padded.
///
/// This is the genie reference: it is the teacher target for reservoir
/// training and the bound all causal detectors are compared against.
pub fn genie_thresholds(symbols: &crate::waveform::SymbolSequence, table: &IsiTable) -> Result<Vec<f64>> {
    let s = symbols.as_slice();
    let p = table.past_depth;
    let f = table.future_depth;
    if s.len() < p + f + 1 {
        return Err(Error::InvalidInput(format!(
            "sequence of {} symbols is shorter than one full neighborhood ({})",
            s.len(),
            p + f + 1
        )));
    }
    let n = s.len();
    let mut past = vec![0i8; p];
    let mut future = vec![0i8; f];
    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        for k in 0..p {
            let j = idx as i64 - p as i64 + k as i64;
            past[k] = if j >= 0 { s[j as usize] } else { 0 };
        }
        for k in 0..f {
            let j = idx + 1 + k;
            future[k] = if j < n { s[j] } else { 0 };
        }
        out.push(optimal_threshold(&past, &future, table)?);
    }
    Ok(out)
}

/// Physically measures one interference coefficient: transmits a lone `+1`
/// through a single channel tap and reads the scaled matched-filter output
/// at the decision sample `i` symbol periods earlier, exactly where that
/// pulse leaks into a neighbor's decision. `i = 0` reads the signal term
/// itself.
///
/// This is the independent check on [`isi_coefficient`]: it exercises the
/// whole synthesis / channel / filter chain and never touches the closed
/// form. The measurement is a rectangle-rule approximation of the
/// correlation integral, so it carries an `O(1/oversampling)` amplitude
/// bias; calibrating on a single reference point cancels the common factor.
/// The tap delay must be representable on the sample grid.
pub fn matched_filter_contribution(
    tap: &PathTap,
    i: i64,
    params: &CsfParams,
    oversampling: usize,
) -> Result<f64> {
    let n_s = oversampling as i64;
    let guard = 16usize.max(i.unsigned_abs() as usize + 2);
    let lone = SymbolSequence::from_bits(&[true]);
    let mut x = synthesize_baseband(&lone, params, oversampling, guard)?;
    // Synthesis covers t < 1 only; the lone pulse is identically zero
    // beyond, but the echo and the probed decision samples are not. Extend
    // the capture window rightward so neither gets truncated.
    let extension = (i.unsigned_abs() as usize + tap.delay.ceil() as usize + 2) * oversampling;
    x.samples.extend(std::iter::repeat(0.0).take(extension));
    let channel = if tap.delay == 0.0 {
        MultipathChannel::new(vec![*tap])?
    } else {
        // The leading tap is only the timing reference; its gain is far
        // below the tolerance of any caller.
        MultipathChannel::new(vec![PathTap { gain: 1e-30, delay: 0.0 }, *tap])?
    };
    let received = apply_multipath(&x, &channel)?;
    let filtered = matched_filter_with_guard(&received, params, guard);
    // Symbol n's decision sample sits at origin + n * N_s; the lone pulse is
    // symbol n + i, so the probed symbol is n = -i.
    let idx = filtered.origin_offset - i * n_s;
    if idx < 0 || idx as usize >= filtered.samples.len() {
        return Err(Error::InvalidInput(format!(
            "offset {i} at delay {} falls outside the probe signal",
            tap.delay
        )));
    }
    Ok(decision_scale(params) * filtered.samples[idx as usize])
}
