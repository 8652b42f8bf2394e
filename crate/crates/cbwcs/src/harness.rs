//! Monte Carlo BER experiments: frame assembly, per-frame training and
//! detection, deterministic seeding, CSV output.
//!
//! An experiment is a grid of Eb/N0 points crossed with a set of detection
//! methods, averaged over frames. Each frame transmits one pilot block
//! (the reservoir training sequence) followed by data bits; every method
//! decodes the same noisy matched-filter windows, so method deltas are
//! paired rather than noise-confounded.
//!
//! Every random draw is derived from `(master_seed, frame, purpose)`, which
//! makes experiments reproducible bit-for-bit regardless of how frames are
//! scheduled across worker threads.

use std::collections::HashSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{
    add_awgn, apply_multipath, channel_from_fading, default_delays, draw_frame_gamma,
    energy_per_bit, noise_variance, FadingLaw, MultipathChannel, NoiseSpec, TimeVaryingSpec,
};
use crate::esn::{
    build_training_symbols, build_training_symbols_de_bruijn, harvest_states, init_weights,
    train_readout, update_state, EsnConfig, EsnState, EsnWeights, TrainingSet,
};
use crate::receiver::{
    decision_noise_variance, detect_frame, ls_channel_estimate, mmse_equalizer_design,
    ChannelEstimate, DetectionContext, DetectionMethod,
};
use crate::threshold::{
    build_isi_table, decision_scale, genie_thresholds, pulse_autocorrelation, IsiTable,
    ThresholdConfig,
};
use crate::waveform::{
    extract_windows, matched_filter, synthesize_baseband, CsfParams, SampledSignal,
    SymbolSequence, SymbolWindow, DEFAULT_DECISION_INDEX, DEFAULT_GUARD_SYMBOLS,
    DEFAULT_OVERSAMPLING,
};
use crate::{Error, Result};

/// Bit budget of one frame: pilot block followed by data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLayout {
    pub total_bits: usize,
    pub pilot_bits: usize,
    pub data_bits: usize,
}

impl FrameLayout {
    pub fn new(pilot_bits: usize, data_bits: usize) -> Result<Self> {
        if pilot_bits == 0 || data_bits == 0 {
            return Err(Error::InvalidInput("frame sections must be non-empty".into()));
        }
        Ok(Self { total_bits: pilot_bits + data_bits, pilot_bits, data_bits })
    }
}

impl Default for FrameLayout {
    /// 2048-bit frame: 996 header (pilot) bits plus 1052 data bits.
    fn default() -> Self {
        Self { total_bits: 2048, pilot_bits: 996, data_bits: 1052 }
    }
}

/// Which pilot sequence the reservoirs train on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingSequence {
    /// 100 random washout symbols plus all 128 seven-bit patterns in
    /// counting order (996 symbols).
    BinaryCounting,
    /// 100 random washout symbols plus a De Bruijn cycle of order 7 with a
    /// six-symbol wrap (234 symbols); every 7-window appears exactly once.
    DeBruijn,
}

impl TrainingSequence {
    fn pilot_bits(self) -> usize {
        match self {
            TrainingSequence::BinaryCounting => 996,
            TrainingSequence::DeBruijn => 234,
        }
    }
}

impl std::fmt::Display for TrainingSequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainingSequence::BinaryCounting => "binary_counting",
            TrainingSequence::DeBruijn => "de_bruijn",
        })
    }
}

impl FromStr for TrainingSequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary_counting" => Ok(TrainingSequence::BinaryCounting),
            "de_bruijn" => Ok(TrainingSequence::DeBruijn),
            other => Err(Error::Config(format!(
                "unknown training_sequence '{other}' (expected binary_counting or de_bruijn)"
            ))),
        }
    }
}

/// Channel regime of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// One path, no interference beyond the pulse's own tails.
    SinglePath,
    /// Static multipath channel, known exactly to the receiver.
    MultipathKnown,
    /// Static multipath channel, estimated from pilots every frame.
    MultipathEstimated,
    /// Fading exponent redrawn per frame; always estimated.
    TimeVarying,
}

impl Scenario {
    fn is_estimated(self) -> bool {
        matches!(self, Scenario::MultipathEstimated | Scenario::TimeVarying)
    }

    fn is_static_channel(self) -> bool {
        !matches!(self, Scenario::TimeVarying)
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::SinglePath => "single-path",
            Scenario::MultipathKnown => "multipath-known",
            Scenario::MultipathEstimated => "multipath-estimated",
            Scenario::TimeVarying => "time-varying",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single-path" => Ok(Scenario::SinglePath),
            "multipath-known" => Ok(Scenario::MultipathKnown),
            "multipath-estimated" => Ok(Scenario::MultipathEstimated),
            "time-varying" => Ok(Scenario::TimeVarying),
            other => Err(Error::Config(format!("unknown scenario '{other}'"))),
        }
    }
}

/// Full description of one experiment. Config files use exactly these field
/// names as keys.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    /// Path count; must be 1 for the single-path scenario.
    pub paths: usize,
    /// Fading exponent of the static scenarios.
    pub gamma: f64,
    /// Per-frame fading range of the time-varying scenario.
    pub gamma_low: f64,
    pub gamma_high: f64,
    /// Eb/N0 grid in dB; `None` is the noise-free point.
    pub ebn0_grid: Vec<Option<f64>>,
    pub methods: Vec<DetectionMethod>,
    pub frames: usize,
    pub master_seed: u64,
    pub training_sequence: TrainingSequence,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            scenario: Scenario::MultipathKnown,
            paths: 2,
            gamma: 0.6,
            gamma_low: 0.3,
            gamma_high: 0.9,
            ebn0_grid: (0..=14).step_by(2).map(|db| Some(db as f64)).collect(),
            methods: DetectionMethod::ALL.to_vec(),
            frames: 200,
            master_seed: 0,
            training_sequence: TrainingSequence::BinaryCounting,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Config("frames must be at least 1".into()));
        }
        if self.ebn0_grid.is_empty() {
            return Err(Error::Config("ebn0_grid must be non-empty".into()));
        }
        for p in self.ebn0_grid.iter().flatten() {
            if !p.is_finite() {
                return Err(Error::Config(format!("ebn0 grid point {p} is not finite")));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must be non-empty".into()));
        }
        let mut seen = HashSet::new();
        for m in &self.methods {
            if !seen.insert(m) {
                return Err(Error::Config(format!("duplicate method '{m}'")));
            }
        }
        if self.paths == 0 {
            return Err(Error::Config("paths must be at least 1".into()));
        }
        if self.scenario == Scenario::SinglePath && self.paths != 1 {
            return Err(Error::Config(format!(
                "single-path scenario requires paths=1, got {}",
                self.paths
            )));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.scenario == Scenario::TimeVarying {
            TimeVaryingSpec::new(self.gamma_low, self.gamma_high)
                .map_err(|e| Error::Config(format!("time-varying bounds: {e}")))?;
        }
        Ok(())
    }

    pub fn layout(&self) -> FrameLayout {
        let pilot = self.training_sequence.pilot_bits();
        FrameLayout { total_bits: pilot + 1052, pilot_bits: pilot, data_bits: 1052 }
    }
}

/// Parses the flat `key=value` config format. Keys mirror [`ExperimentSpec`]
/// field names exactly; unknown or repeated keys are errors. `#` starts a
/// comment, lists are comma-separated, and the grid accepts `inf` for the
/// noise-free point.
pub fn parse_config(text: &str) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::default();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got '{line}'", idx + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(Error::Config(format!("line {}: duplicate key '{key}'", idx + 1)));
        }
        let fail = |what: &str| Error::Config(format!("line {}: {what} '{value}'", idx + 1));
        match key {
            "scenario" => spec.scenario = value.parse()?,
            "paths" => spec.paths = value.parse().map_err(|_| fail("bad path count"))?,
            "gamma" => spec.gamma = value.parse().map_err(|_| fail("bad gamma"))?,
            "gamma_low" => spec.gamma_low = value.parse().map_err(|_| fail("bad gamma_low"))?,
            "gamma_high" => spec.gamma_high = value.parse().map_err(|_| fail("bad gamma_high"))?,
            "ebn0_grid" => {
                spec.ebn0_grid = value
                    .split(',')
                    .map(|tok| {
                        let tok = tok.trim();
                        if tok == "inf" {
                            Ok(None)
                        } else {
                            tok.parse::<f64>().map(Some).map_err(|_| fail("bad grid point"))
                        }
                    })
                    .collect::<Result<_>>()?;
            }
            "methods" => {
                spec.methods = value
                    .split(',')
                    .map(|tok| tok.trim().parse())
                    .collect::<Result<_>>()?;
            }
            "frames" => spec.frames = value.parse().map_err(|_| fail("bad frame count"))?,
            "master_seed" => {
                spec.master_seed = value.parse().map_err(|_| fail("bad master_seed"))?;
            }
            "training_sequence" => spec.training_sequence = value.parse()?,
            other => return Err(Error::Config(format!("line {}: unknown key '{other}'", idx + 1))),
        }
    }
    spec.validate()?;
    Ok(spec)
}

/// Aggregated error count for one (method, grid point) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerRecord {
    pub method: DetectionMethod,
    /// `None` is the noise-free point (printed as `inf`).
    pub ebn0_db: Option<f64>,
    pub bits: u64,
    pub errors: u64,
    pub ber: f64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const PURPOSE_PILOT: u64 = 0xA1;
pub const PURPOSE_DATA: u64 = 0xA2;
pub const PURPOSE_GAMMA: u64 = 0xA3;
pub const PURPOSE_NOISE_BASE: u64 = 0xB000;

/// Stream generator for one (frame, purpose) pair. Frames are independent
/// work units; nothing is shared between purposes, so adding a consumer
/// never shifts another consumer's draws.
pub fn frame_rng(master_seed: u64, frame: u64, purpose: u64) -> ChaCha8Rng {
    let seed = splitmix64(splitmix64(splitmix64(master_seed) ^ frame) ^ purpose);
    ChaCha8Rng::seed_from_u64(seed)
}

fn noise_spec(point: Option<f64>) -> NoiseSpec {
    match point {
        None => NoiseSpec::NoiseFree,
        Some(db) => NoiseSpec::EbN0Db(db),
    }
}

// --- per-frame pipeline ---

/// Trains the one-shot threshold readout on pilot windows with genie
/// teachers and returns the trained network plus the state it reached at the
/// pilot/data boundary.
pub fn train_method2_readout(
    base: &EsnWeights,
    pilot_windows: &[SymbolWindow],
    teachers: &[f64],
) -> Result<(EsnWeights, EsnState)> {
    let training = TrainingSet::from_windows(pilot_windows, teachers)?;
    let (big_r, t_row, state) = harvest_states(base, &training)?;
    let w_out = train_readout(&big_r, &t_row, base.config().lambda_r)?;
    let mut trained = base.clone();
    trained.set_w_out(w_out)?;
    Ok((trained, state))
}

/// Trains the scalar sample predictor one-step-ahead on the pilot sample
/// stream, then keeps teacher-forcing through the remaining pilot samples so
/// the returned state sits at the pilot/data boundary.
pub fn train_method1_readout(
    base: &EsnWeights,
    pilot_windows: &[SymbolWindow],
) -> Result<(EsnWeights, EsnState)> {
    let stream: Vec<f64> =
        pilot_windows.iter().flat_map(|w| w.values.iter().copied()).collect();
    let cfg = *base.config();
    if stream.len() <= cfg.n_max {
        return Err(Error::InvalidInput(format!(
            "pilot stream of {} samples cannot cover n_max = {}",
            stream.len(),
            cfg.n_max
        )));
    }
    let training = TrainingSet::one_step_ahead(&stream[..cfg.n_max + 1])?;
    let (big_r, t_row, mut state) = harvest_states(base, &training)?;
    let w_out = train_readout(&big_r, &t_row, cfg.lambda_r)?;
    let mut trained = base.clone();
    trained.set_w_out(w_out)?;
    // Harvesting consumed inputs 0..n_max-1; resume forcing at n_max so the
    // state stays sample-aligned with the window boundaries.
    let mut u = DVector::zeros(1);
    for &v in &stream[cfg.n_max..] {
        u[0] = v;
        state = update_state(&state, &u, v, &trained)?;
    }
    Ok((trained, state))
}

/// Teacher-forces an already-trained threshold readout through pilot windows
/// (no harvesting) and returns the boundary state.
pub fn warm_method2(
    weights: &EsnWeights,
    pilot_windows: &[SymbolWindow],
    teachers: &[f64],
) -> Result<EsnState> {
    if pilot_windows.len() != teachers.len() {
        return Err(Error::InvalidInput(format!(
            "{} pilot windows but {} teachers",
            pilot_windows.len(),
            teachers.len()
        )));
    }
    let mut state = EsnState::zero(weights.n());
    let mut fb = 0.0;
    for (w, &theta) in pilot_windows.iter().zip(teachers) {
        let u = DVector::from_row_slice(&w.values);
        state = update_state(&state, &u, fb, weights)?;
        fb = theta;
    }
    state.last_output = fb;
    Ok(state)
}

/// Teacher-forces the scalar predictor through the whole pilot sample stream
/// and returns the boundary state.
pub fn warm_method1(weights: &EsnWeights, pilot_windows: &[SymbolWindow]) -> Result<EsnState> {
    let mut state = EsnState::zero(weights.n());
    let mut u = DVector::zeros(1);
    for w in pilot_windows {
        for &v in &w.values {
            u[0] = v;
            state = update_state(&state, &u, v, weights)?;
        }
    }
    Ok(state)
}

struct FrameSignal {
    pilot: SymbolSequence,
    data: SymbolSequence,
    x: SampledSignal,
    clean: SampledSignal,
    eb: f64,
    channel: MultipathChannel,
}

struct GridTrained {
    w2: Option<EsnWeights>,
    w1: Option<EsnWeights>,
}

struct Env {
    spec: ExperimentSpec,
    params: CsfParams,
    layout: FrameLayout,
    kappa: f64,
    /// Decision-sample amplitude of a unit channel tap, used to normalize
    /// the MMSE noise variance.
    unit_tap_gain: f64,
    base2: Option<EsnWeights>,
    base1: Option<EsnWeights>,
    static_channel: Option<MultipathChannel>,
    /// Readouts trained once on frame 0, known-static scenarios only.
    pretrained: Option<Vec<GridTrained>>,
}

impl Env {
    fn wants(&self, m: DetectionMethod) -> bool {
        self.spec.methods.contains(&m)
    }
}

fn annotate(frame: u64, point: Option<f64>) -> impl Fn(Error) -> Error {
    move |e| {
        let at = match point {
            None => "noise-free".to_string(),
            Some(db) => format!("{db} dB"),
        };
        Error::Experiment(format!("frame {frame}, grid point {at}: {e}"))
    }
}

fn build_frame_signal(env: &Env, frame: u64) -> Result<FrameSignal> {
    let spec = &env.spec;
    let mut prng = frame_rng(spec.master_seed, frame, PURPOSE_PILOT);
    let pilot = match spec.training_sequence {
        TrainingSequence::BinaryCounting => build_training_symbols(&mut prng),
        TrainingSequence::DeBruijn => build_training_symbols_de_bruijn(&mut prng),
    };
    debug_assert_eq!(pilot.len(), env.layout.pilot_bits);
    let mut drng = frame_rng(spec.master_seed, frame, PURPOSE_DATA);
    let bits: Vec<bool> = (0..env.layout.data_bits).map(|_| drng.gen()).collect();
    let data = SymbolSequence::from_bits(&bits);
    let channel = match &env.static_channel {
        Some(c) => c.clone(),
        None => {
            let mut grng = frame_rng(spec.master_seed, frame, PURPOSE_GAMMA);
            let tv = TimeVaryingSpec::new(spec.gamma_low, spec.gamma_high)?;
            let gamma = draw_frame_gamma(&tv, &mut grng);
            channel_from_fading(spec.paths, FadingLaw::new(gamma)?, &default_delays(spec.paths))?
        }
    };
    let all = pilot.concat(&data);
    let x = synthesize_baseband(&all, &env.params, DEFAULT_OVERSAMPLING, DEFAULT_GUARD_SYMBOLS)?;
    let eb = energy_per_bit(&x, env.params.f(), all.len())?;
    let clean = apply_multipath(&x, &channel)?;
    Ok(FrameSignal { pilot, data, x, clean, eb, channel })
}

fn grid_received(env: &Env, fs: &FrameSignal, frame: u64, g: usize) -> Result<SampledSignal> {
    let mut nrng = frame_rng(env.spec.master_seed, frame, PURPOSE_NOISE_BASE + g as u64);
    add_awgn(&fs.clean, &noise_spec(env.spec.ebn0_grid[g]), fs.eb, env.params.f(), &mut nrng)
}

fn pilot_only_cut(env: &Env, x: &SampledSignal) -> usize {
    // Data symbol `pilot_bits` starts bleeding backward at
    // (pilot_bits - guard) symbol periods; everything before that is pure
    // pilot plus its multipath echoes.
    x.origin_offset as usize + (env.layout.pilot_bits - DEFAULT_GUARD_SYMBOLS) * x.oversampling
}

fn truncated(signal: &SampledSignal, cut: usize) -> SampledSignal {
    SampledSignal {
        samples: signal.samples[..cut].to_vec(),
        oversampling: signal.oversampling,
        origin_offset: signal.origin_offset,
    }
}

/// Channel knowledge for one received frame: exact in the known scenarios,
/// least-squares from the pilot region otherwise.
fn channel_knowledge(
    env: &Env,
    fs: &FrameSignal,
    received: &SampledSignal,
) -> Result<(ChannelEstimate, MultipathChannel)> {
    if env.spec.scenario.is_estimated() {
        let cut = pilot_only_cut(env, &fs.x);
        let max_delay = env.spec.paths * DEFAULT_OVERSAMPLING;
        let estimate =
            ls_channel_estimate(&truncated(&fs.x, cut), &truncated(received, cut), max_delay)?;
        let channel = estimate.to_channel()?;
        Ok((estimate, channel))
    } else {
        let estimate = ChannelEstimate::from_channel(&fs.channel, DEFAULT_OVERSAMPLING)?;
        Ok((estimate, fs.channel.clone()))
    }
}

/// Decodes one frame at one grid point with every requested method,
/// returning (bits, errors) per method in spec order.
fn run_frame_point(
    env: &Env,
    fs: &FrameSignal,
    frame: u64,
    g: usize,
) -> Result<Vec<(u64, u64)>> {
    let spec = &env.spec;
    let received = grid_received(env, fs, frame, g)?;
    let y = matched_filter(&received, &env.params).scaled(env.kappa);
    let windows = extract_windows(&y, env.layout.total_bits, DEFAULT_DECISION_INDEX)?;
    let (pilot_windows, data_windows) = windows.split_at(env.layout.pilot_bits);

    let needs_esn = env.wants(DetectionMethod::Method1) || env.wants(DetectionMethod::Method2);
    let needs_table = needs_esn || env.wants(DetectionMethod::Suboptimal);
    let needs_estimate =
        env.wants(DetectionMethod::Mmse) || (needs_table && spec.scenario.is_estimated());

    let knowledge = if needs_estimate || needs_table {
        Some(channel_knowledge(env, fs, &received)?)
    } else {
        None
    };
    let table: Option<IsiTable> = if needs_table {
        let (_, ch) = knowledge.as_ref().expect("knowledge computed above");
        Some(build_isi_table(ch, &env.params, &ThresholdConfig::default())?)
    } else {
        None
    };
    let teachers: Option<Vec<f64>> = if env.wants(DetectionMethod::Method2) {
        Some(genie_thresholds(&fs.pilot, table.as_ref().expect("method2 implies table"))?)
    } else {
        None
    };

    let pretrained = env.pretrained.as_ref().map(|per_grid| &per_grid[g]);
    let m2: Option<(EsnWeights, EsnState)> = if env.wants(DetectionMethod::Method2) {
        let teachers = teachers.as_ref().expect("teachers computed above");
        match pretrained.and_then(|p| p.w2.as_ref()) {
            Some(w) => {
                let state = warm_method2(w, pilot_windows, teachers)?;
                Some((w.clone(), state))
            }
            None => {
                let base = env.base2.as_ref().expect("method2 requested");
                Some(train_method2_readout(base, pilot_windows, teachers)?)
            }
        }
    } else {
        None
    };
    let m1: Option<(EsnWeights, EsnState)> = if env.wants(DetectionMethod::Method1) {
        match pretrained.and_then(|p| p.w1.as_ref()) {
            Some(w) => Some((w.clone(), warm_method1(w, pilot_windows)?)),
            None => {
                let base = env.base1.as_ref().expect("method1 requested");
                Some(train_method1_readout(base, pilot_windows)?)
            }
        }
    } else {
        None
    };
    let equalizer = if env.wants(DetectionMethod::Mmse) {
        let (estimate, _) = knowledge.as_ref().expect("mmse implies estimate");
        let sigma2 = noise_variance(
            &noise_spec(spec.ebn0_grid[g]),
            fs.eb,
            env.params.f(),
            DEFAULT_OVERSAMPLING,
        );
        let sigma_z2 = decision_noise_variance(
            sigma2,
            &env.params,
            DEFAULT_OVERSAMPLING,
            DEFAULT_GUARD_SYMBOLS,
        );
        Some(mmse_equalizer_design(
            estimate,
            sigma_z2 / (env.unit_tap_gain * env.unit_tap_gain),
            15,
        )?)
    } else {
        None
    };

    let truth = fs.data.as_slice();
    let mut out = Vec::with_capacity(spec.methods.len());
    for &method in &spec.methods {
        let context = match method {
            DetectionMethod::Zero => DetectionContext::Zero,
            DetectionMethod::Suboptimal => DetectionContext::Suboptimal {
                table: table.as_ref().expect("suboptimal implies table"),
            },
            DetectionMethod::Method1 => {
                let (w, s) = m1.as_ref().expect("method1 trained above");
                DetectionContext::Method1 {
                    esn: w,
                    table: table.as_ref().expect("method1 implies table"),
                    initial: s,
                }
            }
            DetectionMethod::Method2 => {
                let (w, s) = m2.as_ref().expect("method2 trained above");
                DetectionContext::Method2 { esn: w, initial: s }
            }
            DetectionMethod::Mmse => DetectionContext::Mmse {
                equalizer: equalizer.as_ref().expect("mmse designed above"),
            },
        };
        let decoded = detect_frame(data_windows, method, &context)?;
        let errors = decoded
            .as_slice()
            .iter()
            .zip(truth)
            .filter(|(a, b)| a != b)
            .count() as u64;
        out.push((truth.len() as u64, errors));
    }
    Ok(out)
}

fn run_frame(env: &Env, frame: u64) -> Result<Vec<(u64, u64)>> {
    let fs = build_frame_signal(env, frame)?;
    let mut counts = Vec::with_capacity(env.spec.ebn0_grid.len() * env.spec.methods.len());
    for g in 0..env.spec.ebn0_grid.len() {
        let point = run_frame_point(env, &fs, frame, g)
            .map_err(annotate(frame, env.spec.ebn0_grid[g]))?;
        counts.extend(point);
    }
    Ok(counts)
}

fn build_env(spec: &ExperimentSpec) -> Result<Env> {
    let params = CsfParams::default();
    let layout = spec.layout();
    let base2 = if spec.methods.contains(&DetectionMethod::Method2) {
        let config = EsnConfig {
            n_max: layout.pilot_bits,
            seed: splitmix64(spec.master_seed ^ 0x4553_4e32),
            ..EsnConfig::default()
        };
        Some(init_weights(&config)?)
    } else {
        None
    };
    let base1 = if spec.methods.contains(&DetectionMethod::Method1) {
        let samples = layout.pilot_bits * DEFAULT_OVERSAMPLING;
        let scalar = EsnConfig::scalar_baseline();
        let config = EsnConfig {
            n_max: scalar.n_max.min(samples - DEFAULT_OVERSAMPLING),
            seed: splitmix64(spec.master_seed ^ 0x4553_4e31),
            ..scalar
        };
        Some(init_weights(&config)?)
    } else {
        None
    };
    let static_channel = if spec.scenario.is_static_channel() {
        Some(channel_from_fading(
            spec.paths,
            FadingLaw::new(spec.gamma)?,
            &default_delays(spec.paths),
        )?)
    } else {
        None
    };
    let mut env = Env {
        spec: spec.clone(),
        params,
        layout,
        kappa: decision_scale(&params),
        unit_tap_gain: decision_scale(&params) * pulse_autocorrelation(0.0, &params),
        base2,
        base1,
        static_channel,
        pretrained: None,
    };
    // Known-static scenarios train the readouts once, on frame 0's pilots,
    // at each grid point's noise level. Estimated and time-varying
    // scenarios retrain per frame because the teachers depend on the
    // per-frame channel (estimate).
    if spec.scenario.is_static_channel() && !spec.scenario.is_estimated() {
        let fs = build_frame_signal(&env, 0)?;
        let table = build_isi_table(&fs.channel, &env.params, &ThresholdConfig::default())?;
        let teachers = genie_thresholds(&fs.pilot, &table)?;
        let mut per_grid = Vec::with_capacity(spec.ebn0_grid.len());
        for g in 0..spec.ebn0_grid.len() {
            let received = grid_received(&env, &fs, 0, g)?;
            let y = matched_filter(&received, &env.params).scaled(env.kappa);
            let windows = extract_windows(&y, layout.total_bits, DEFAULT_DECISION_INDEX)?;
            let pilot_windows = &windows[..layout.pilot_bits];
            let w2 = match &env.base2 {
                Some(base) => Some(train_method2_readout(base, pilot_windows, &teachers)?.0),
                None => None,
            };
            let w1 = match &env.base1 {
                Some(base) => Some(train_method1_readout(base, pilot_windows)?.0),
                None => None,
            };
            per_grid.push(GridTrained { w2, w1 });
        }
        env.pretrained = Some(per_grid);
    }
    Ok(env)
}

/// Runs the experiment and returns one record per (method, grid point),
/// sorted by method tag then Eb/N0. Frames are distributed over the rayon
/// pool; the result is identical for any worker count.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<BerRecord>> {
    spec.validate()?;
    let env = build_env(spec)?;
    let per_frame: Vec<Result<Vec<(u64, u64)>>> =
        (0..spec.frames as u64).into_par_iter().map(|f| run_frame(&env, f)).collect();
    let cells = spec.ebn0_grid.len() * spec.methods.len();
    let mut totals = vec![(0u64, 0u64); cells];
    for frame in per_frame {
        let counts = frame?;
        for (slot, (bits, errors)) in totals.iter_mut().zip(counts) {
            slot.0 += bits;
            slot.1 += errors;
        }
    }
    let mut records = Vec::with_capacity(cells);
    for (g, &point) in spec.ebn0_grid.iter().enumerate() {
        for (m, &method) in spec.methods.iter().enumerate() {
            let (bits, errors) = totals[g * spec.methods.len() + m];
            records.push(BerRecord {
                method,
                ebn0_db: point,
                bits,
                errors,
                ber: errors as f64 / bits as f64,
            });
        }
    }
    sort_records(&mut records);
    Ok(records)
}

fn ebn0_sort_key(point: Option<f64>) -> f64 {
    point.unwrap_or(f64::INFINITY)
}

fn sort_records(records: &mut [BerRecord]) {
    records.sort_by(|a, b| {
        a.method
            .tag()
            .cmp(b.method.tag())
            .then(ebn0_sort_key(a.ebn0_db).partial_cmp(&ebn0_sort_key(b.ebn0_db)).unwrap())
    });
}

fn format_ebn0(point: Option<f64>) -> String {
    match point {
        None => "inf".to_string(),
        Some(db) => format!("{db:.16e}"),
    }
}

/// Renders records as CSV: header `method,ebn0_db,bits,errors,ber`, one row
/// per record, floats at 17 significant digits, rows sorted by
/// (method, ebn0_db), noise-free last.
pub fn emit_csv_string(records: &[BerRecord]) -> String {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut out = String::from("method,ebn0_db,bits,errors,ber\n");
    for r in &sorted {
        out.push_str(&format!(
            "{},{},{},{},{:.16e}\n",
            r.method.tag(),
            format_ebn0(r.ebn0_db),
            r.bits,
            r.errors,
            r.ber
        ));
    }
    out
}

pub fn emit_csv(records: &[BerRecord], path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::Experiment(format!("cannot write {}: {e}", path.display())))?;
    file.write_all(emit_csv_string(records).as_bytes())
        .map_err(|e| Error::Experiment(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Parses CSV produced by [`emit_csv_string`] (round-trip exact).
pub fn parse_csv(text: &str) -> Result<Vec<BerRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("method,ebn0_db,bits,errors,ber") => {}
        other => {
            return Err(Error::InvalidInput(format!("bad CSV header: {other:?}")));
        }
    }
    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::InvalidInput(format!(
                "row {}: expected 5 fields, got {}",
                idx + 2,
                fields.len()
            )));
        }
        let bad = |what: &str| Error::InvalidInput(format!("row {}: bad {what}", idx + 2));
        records.push(BerRecord {
            method: fields[0].parse()?,
            ebn0_db: if fields[1] == "inf" {
                None
            } else {
                Some(fields[1].parse().map_err(|_| bad("ebn0_db"))?)
            },
            bits: fields[2].parse().map_err(|_| bad("bits"))?,
            errors: fields[3].parse().map_err(|_| bad("errors"))?,
            ber: fields[4].parse().map_err(|_| bad("ber"))?,
        });
    }
    Ok(records)
}

/// Writes one `<method>.dat` series file per method into `dir`, rows
/// `ebn0_db ber`, for external plotting. Returns the created paths.
pub fn emit_plot_data(records: &[BerRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut paths = Vec::new();
    let mut current: Option<(DetectionMethod, String)> = None;
    let flush = |current: &mut Option<(DetectionMethod, String)>,
                 paths: &mut Vec<PathBuf>|
     -> Result<()> {
        if let Some((method, body)) = current.take() {
            let path = dir.join(format!("{}.dat", method.tag()));
            std::fs::write(&path, body)
                .map_err(|e| Error::Experiment(format!("cannot write {}: {e}", path.display())))?;
            paths.push(path);
        }
        Ok(())
    };
    for r in &sorted {
        match &mut current {
            Some((method, body)) if *method == r.method => {
                body.push_str(&format!("{} {:.16e}\n", format_ebn0(r.ebn0_db), r.ber));
            }
            _ => {
                flush(&mut current, &mut paths)?;
                current = Some((
                    r.method,
                    format!("{} {:.16e}\n", format_ebn0(r.ebn0_db), r.ber),
                ));
            }
        }
    }
    flush(&mut current, &mut paths)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_default_and_validation() {
        let l = FrameLayout::default();
        assert_eq!(l.total_bits, 2048);
        assert_eq!(l.pilot_bits + l.data_bits, l.total_bits);
        assert!(FrameLayout::new(0, 10).is_err());
        assert_eq!(FrameLayout::new(996, 1052).unwrap(), l);
    }

    #[test]
    fn config_round_trip_of_every_key() {
        let text = "\
# full example
scenario = time-varying
paths = 3
gamma = 0.7
gamma_low = 0.4
gamma_high = 0.8
ebn0_grid = 0, 2, 4, inf
methods = zero, method2
frames = 7
master_seed = 99
training_sequence = de_bruijn
";
        let spec = parse_config(text).unwrap();
        assert_eq!(spec.scenario, Scenario::TimeVarying);
        assert_eq!(spec.paths, 3);
        assert_eq!(spec.gamma, 0.7);
        assert_eq!(spec.gamma_low, 0.4);
        assert_eq!(spec.gamma_high, 0.8);
        assert_eq!(spec.ebn0_grid, vec![Some(0.0), Some(2.0), Some(4.0), None]);
        assert_eq!(spec.methods, vec![DetectionMethod::Zero, DetectionMethod::Method2]);
        assert_eq!(spec.frames, 7);
        assert_eq!(spec.master_seed, 99);
        assert_eq!(spec.training_sequence, TrainingSequence::DeBruijn);
        assert_eq!(spec.layout().pilot_bits, 234);
    }

    #[test]
    fn config_rejects_unknown_and_duplicate_keys() {
        let err = parse_config("framez = 3\n").unwrap_err();
        assert!(err.to_string().contains("unknown key 'framez'"), "{err}");
        let err = parse_config("frames = 3\nframes = 4\n").unwrap_err();
        assert!(err.to_string().contains("duplicate key 'frames'"), "{err}");
        let err = parse_config("frames\n").unwrap_err();
        assert!(err.to_string().contains("expected key=value"), "{err}");
        let err = parse_config("ebn0_grid = 1, two\n").unwrap_err();
        assert!(err.to_string().contains("bad grid point"), "{err}");
    }

    #[test]
    fn spec_validation_catches_inconsistencies() {
        let mut spec = ExperimentSpec::default();
        spec.frames = 0;
        assert!(spec.validate().is_err());
        let mut spec = ExperimentSpec::default();
        spec.scenario = Scenario::SinglePath;
        assert!(spec.validate().is_err());
        spec.paths = 1;
        assert!(spec.validate().is_ok());
        let mut spec = ExperimentSpec::default();
        spec.methods = vec![DetectionMethod::Zero, DetectionMethod::Zero];
        assert!(spec.validate().is_err());
        let mut spec = ExperimentSpec::default();
        spec.scenario = Scenario::TimeVarying;
        spec.gamma_low = 0.9;
        spec.gamma_high = 0.3;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn scenario_and_training_sequence_tags_roundtrip() {
        for s in [
            Scenario::SinglePath,
            Scenario::MultipathKnown,
            Scenario::MultipathEstimated,
            Scenario::TimeVarying,
        ] {
            assert_eq!(s.to_string().parse::<Scenario>().unwrap(), s);
        }
        for t in [TrainingSequence::BinaryCounting, TrainingSequence::DeBruijn] {
            assert_eq!(t.to_string().parse::<TrainingSequence>().unwrap(), t);
        }
    }

    #[test]
    fn frame_rng_streams_are_purpose_separated() {
        let mut a = frame_rng(1, 2, PURPOSE_DATA);
        let mut b = frame_rng(1, 2, PURPOSE_DATA);
        let mut c = frame_rng(1, 2, PURPOSE_PILOT);
        let mut d = frame_rng(1, 3, PURPOSE_DATA);
        let xa: u64 = a.gen();
        assert_eq!(xa, b.gen::<u64>());
        assert_ne!(xa, c.gen::<u64>());
        assert_ne!(xa, d.gen::<u64>());
    }

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec {
            ebn0_grid: vec![Some(6.0), None],
            methods: vec![DetectionMethod::Zero, DetectionMethod::Suboptimal],
            frames: 2,
            master_seed: 7,
            ..ExperimentSpec::default()
        }
    }

    #[test]
    fn reruns_are_identical_and_worker_count_free() {
        let spec = small_spec();
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a, b);
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_experiment(&spec))
            .unwrap();
        assert_eq!(emit_csv_string(&a), emit_csv_string(&single));
    }

    #[test]
    fn method_subsets_do_not_perturb_each_other() {
        // Dropping a method must not change another method's draws.
        let spec = small_spec();
        let both = run_experiment(&spec).unwrap();
        let only_zero = run_experiment(&ExperimentSpec {
            methods: vec![DetectionMethod::Zero],
            ..spec.clone()
        })
        .unwrap();
        let zero_rows: Vec<_> =
            both.iter().filter(|r| r.method == DetectionMethod::Zero).copied().collect();
        assert_eq!(zero_rows, only_zero);
    }

    #[test]
    fn single_path_noise_free_method2_baseline() {
        // End-to-end regression baseline: the single-path noise-free frame
        // decodes perfectly.
        let spec = ExperimentSpec {
            scenario: Scenario::SinglePath,
            paths: 1,
            ebn0_grid: vec![None],
            methods: vec![DetectionMethod::Method2],
            frames: 1,
            master_seed: 0,
            ..ExperimentSpec::default()
        };
        let records = run_experiment(&spec).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].bits, 1052);
        assert_eq!(records[0].errors, 0);
        assert_eq!(records[0].ber, 0.0);
    }

    #[test]
    fn estimated_and_time_varying_scenarios_run() {
        let spec = ExperimentSpec {
            scenario: Scenario::TimeVarying,
            ebn0_grid: vec![Some(10.0)],
            frames: 2,
            master_seed: 3,
            ..ExperimentSpec::default()
        };
        let records = run_experiment(&spec).unwrap();
        assert_eq!(records.len(), DetectionMethod::ALL.len());
        for r in &records {
            assert_eq!(r.bits, 2 * 1052);
            assert!(r.errors <= r.bits);
        }
    }

    fn fixture_records() -> Vec<BerRecord> {
        vec![
            BerRecord {
                method: DetectionMethod::Zero,
                ebn0_db: Some(2.0),
                bits: 2104,
                errors: 211,
                ber: 211.0 / 2104.0,
            },
            BerRecord {
                method: DetectionMethod::Method2,
                ebn0_db: None,
                bits: 2104,
                errors: 0,
                ber: 0.0,
            },
            BerRecord {
                method: DetectionMethod::Method2,
                ebn0_db: Some(2.0),
                bits: 2104,
                errors: 37,
                ber: 37.0 / 2104.0,
            },
        ]
    }

    #[test]
    fn csv_matches_the_golden_fixture() {
        let expected = "method,ebn0_db,bits,errors,ber\n\
            method2,2.0000000000000000e0,2104,37,1.7585551330798480e-2\n\
            method2,inf,2104,0,0.0000000000000000e0\n\
            zero,2.0000000000000000e0,2104,211,1.0028517110266159e-1\n";
        assert_eq!(emit_csv_string(&fixture_records()), expected);
    }

    #[test]
    fn csv_round_trips_and_handles_empty_input() {
        assert_eq!(emit_csv_string(&[]), "method,ebn0_db,bits,errors,ber\n");
        let mut records = fixture_records();
        sort_records(&mut records);
        let parsed = parse_csv(&emit_csv_string(&records)).unwrap();
        assert_eq!(parsed, records);
        assert!(parse_csv("nope\n").is_err());
    }

    #[test]
    fn plot_data_emits_one_series_per_method() {
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_plot_data(&fixture_records(), dir.path()).unwrap();
        assert_eq!(paths.len(), 2);
        let m2 = std::fs::read_to_string(dir.path().join("method2.dat")).unwrap();
        assert_eq!(m2.lines().count(), 2);
        assert!(m2.lines().last().unwrap().starts_with("inf "));
    }
}
