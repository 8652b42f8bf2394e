//! Simulator for a chaotic baseband wireless communication system (CBWCS).
//!
//! The transmitter maps bipolar symbols onto a chaotic waveform through a
//! shape-forming filter. The receiver matched-filters the signal and decodes
//! each symbol by comparing one decision sample against a threshold. Over a
//! multipath channel that threshold is not zero: every neighboring symbol
//! leaks a known amount of energy into the decision sample, and the optimal
//! threshold is the signed sum of those leakages. Past symbols are available
//! to the receiver after decoding; future symbols are not, which is where an
//! echo state network comes in: trained on pilot symbols, it predicts the
//! optimal threshold one symbol at a time directly from the matched-filter
//! window.
//!
//! The crate is organized along the signal path:
//!
//! - [`waveform`]: basis pulse, baseband synthesis, matched filter, symbol
//!   windows.
//! - [`channel`]: multipath taps with exponential fading, AWGN.
//! - [`threshold`]: closed-form intersymbol-interference coefficients and the
//!   optimal / suboptimal / one-future-bit thresholds built from them.
//! - [`esn`]: echo state network with trainable ridge readout, plus the
//!   pilot-sequence builder.
//! - [`receiver`]: the five detection pipelines (zero threshold, suboptimal,
//!   one-future-bit ESN, direct threshold ESN, MMSE equalizer) and
//!   least-squares channel estimation.
//! - [`harness`]: frame assembly, Monte Carlo BER experiments, config file
//!   parsing, CSV output.
//! - [`complexity`]: floating-point operation accounting for the two ESN
//!   decoding methods.
//!
//! The `examples/` directory walks each capability end to end; `cargo run
//! --example ber_sweep` is a good starting point.

pub mod channel;
pub mod complexity;
pub mod esn;
pub mod harness;
pub mod receiver;
pub mod threshold;
pub mod waveform;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("readout is not trained")]
    NotTrained,
    #[error("method misconfigured: {0}")]
    Misconfigured(String),
    #[error("channel estimation failed: {0}")]
    EstimationFailed(String),
    #[error("equalizer design failed: {0}")]
    DesignFailed(String),
    #[error("unsupported parameters: {0}")]
    UnsupportedParameters(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("experiment failed: {0}")]
    Experiment(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
