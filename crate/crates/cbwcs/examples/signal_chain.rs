//! Walks one short transmission through the whole receive chain: synthesis,
//! matched filtering, window extraction, and sign decisions on the peak
//! sample. Noise-free single path, so every decision is correct.

use cbwcs::threshold::decision_scale;
use cbwcs::waveform::{
    extract_windows, matched_filter, synthesize_baseband, CsfParams, SymbolSequence,
    DEFAULT_DECISION_INDEX, DEFAULT_GUARD_SYMBOLS, DEFAULT_OVERSAMPLING,
};

fn main() -> cbwcs::Result<()> {
    let params = CsfParams::default();
    let bits = [true, false, false, true, true, true, false, true, false, false];
    let symbols = SymbolSequence::from_bits(&bits);

    let x = synthesize_baseband(&symbols, &params, DEFAULT_OVERSAMPLING, DEFAULT_GUARD_SYMBOLS)?;
    println!(
        "synthesized {} samples at {} per symbol (origin offset {})",
        x.samples.len(),
        x.oversampling,
        x.origin_offset
    );

    let y = matched_filter(&x, &params).scaled(decision_scale(&params));
    let windows = extract_windows(&y, symbols.len(), DEFAULT_DECISION_INDEX)?;

    println!("{:>4} {:>5} {:>12} {:>8}", "n", "sent", "decision", "decoded");
    for (n, (w, &s)) in windows.iter().zip(symbols.as_slice()).enumerate() {
        let sample = w.decision_sample();
        let decoded = if sample >= 0.0 { 1 } else { -1 };
        println!("{n:>4} {s:>5} {sample:>12.6} {decoded:>8}");
        assert_eq!(decoded, s);
    }
    println!("all {} symbols decoded correctly", symbols.len());
    Ok(())
}
