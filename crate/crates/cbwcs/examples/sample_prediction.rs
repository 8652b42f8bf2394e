//! The iterative detector's core trick: a scalar reservoir trained
//! one-step-ahead on the matched-filter stream free-runs eight samples past
//! the frame edge, and the sign of the eighth sample reveals the next
//! symbol before it is decided.

use cbwcs::channel::{
    add_awgn, apply_multipath, channel_from_fading, default_delays, energy_per_bit, FadingLaw,
    NoiseSpec,
};
use cbwcs::esn::{init_weights, readout, update_state, EsnConfig};
use cbwcs::harness::train_method1_readout;
use cbwcs::threshold::decision_scale;
use cbwcs::waveform::{
    extract_windows, matched_filter, synthesize_baseband, CsfParams, SymbolSequence,
    DEFAULT_DECISION_INDEX, DEFAULT_GUARD_SYMBOLS, DEFAULT_OVERSAMPLING,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> cbwcs::Result<()> {
    let params = CsfParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n_sym = 600usize;
    let bits: Vec<bool> = (0..n_sym).map(|_| rng.gen()).collect();
    let symbols = SymbolSequence::from_bits(&bits);
    let channel = channel_from_fading(2, FadingLaw::new(0.6)?, &default_delays(2))?;

    let x = synthesize_baseband(&symbols, &params, DEFAULT_OVERSAMPLING, DEFAULT_GUARD_SYMBOLS)?;
    let eb = energy_per_bit(&x, params.f(), n_sym)?;
    let clean = apply_multipath(&x, &channel)?;
    let received = add_awgn(&clean, &NoiseSpec::EbN0Db(14.0), eb, params.f(), &mut rng)?;
    let y = matched_filter(&received, &params).scaled(decision_scale(&params));
    let windows = extract_windows(&y, n_sym, DEFAULT_DECISION_INDEX)?;

    // train one-step-ahead on the first 480 symbols of the stream
    let split = 480usize;
    let config = EsnConfig {
        n_max: (split - 1) * DEFAULT_OVERSAMPLING,
        ..EsnConfig::scalar_baseline()
    };
    let base = init_weights(&config)?;
    let (trained, mut state) = train_method1_readout(&base, &windows[..split])?;

    // teacher-force the held-out stream, free-running 8 steps at each
    // symbol boundary to call the upcoming symbol's sign
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut u = DVector::zeros(1);
    for (n, w) in windows[split..windows.len() - 1].iter().enumerate() {
        for &v in &w.values {
            u[0] = v;
            state = update_state(&state, &u, v, &trained)?;
        }
        // first emission reads the trained one-step map off the current
        // state; each later step feeds the prediction back in
        let mut free = state.clone();
        u[0] = *w.values.last().expect("window is never empty");
        let mut pred = readout(&free, &u, &trained)?;
        for _ in 1..DEFAULT_DECISION_INDEX {
            u[0] = pred;
            free = update_state(&free, &u, pred, &trained)?;
            pred = readout(&free, &u, &trained)?;
        }
        let called = if pred >= 0.0 { 1i8 } else { -1 };
        correct += usize::from(called == symbols.as_slice()[split + n + 1]);
        total += 1;
    }
    println!(
        "next-symbol calls from eight free-run samples: {correct}/{total} correct ({:.1}%)",
        100.0 * correct as f64 / total as f64
    );
    Ok(())
}
