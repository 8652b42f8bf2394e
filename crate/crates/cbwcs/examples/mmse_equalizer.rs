//! Designs a linear MMSE equalizer from an estimated channel and decodes a
//! noisy frame with it, next to the raw zero-threshold slicer.

use cbwcs::channel::{
    add_awgn, apply_multipath, channel_from_fading, default_delays, energy_per_bit, noise_variance,
    FadingLaw, NoiseSpec,
};
use cbwcs::esn::build_training_symbols;
use cbwcs::receiver::{
    decision_noise_variance, detect_frame, ls_channel_estimate, mmse_equalizer_design,
    DetectionContext, DetectionMethod,
};
use cbwcs::threshold::{decision_scale, pulse_autocorrelation};
use cbwcs::waveform::{
    extract_windows, matched_filter, synthesize_baseband, CsfParams, SymbolSequence,
    DEFAULT_DECISION_INDEX, DEFAULT_GUARD_SYMBOLS, DEFAULT_OVERSAMPLING,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> cbwcs::Result<()> {
    let params = CsfParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let ebn0 = 8.0;

    let pilot = build_training_symbols(&mut rng);
    let bits: Vec<bool> = (0..1052).map(|_| rng.gen()).collect();
    let data = SymbolSequence::from_bits(&bits);
    let all = pilot.concat(&data);
    let channel = channel_from_fading(2, FadingLaw::new(0.6)?, &default_delays(2))?;

    let x = synthesize_baseband(&all, &params, DEFAULT_OVERSAMPLING, DEFAULT_GUARD_SYMBOLS)?;
    let eb = energy_per_bit(&x, params.f(), all.len())?;
    let clean = apply_multipath(&x, &channel)?;
    let received = add_awgn(&clean, &NoiseSpec::EbN0Db(ebn0), eb, params.f(), &mut rng)?;
    let kappa = decision_scale(&params);
    let y = matched_filter(&received, &params).scaled(kappa);
    let windows = extract_windows(&y, all.len(), DEFAULT_DECISION_INDEX)?;

    let estimate = ls_channel_estimate(&x, &received, 2 * DEFAULT_OVERSAMPLING)?;
    let sigma2 = noise_variance(&NoiseSpec::EbN0Db(ebn0), eb, params.f(), DEFAULT_OVERSAMPLING);
    let sigma_z2 =
        decision_noise_variance(sigma2, &params, DEFAULT_OVERSAMPLING, DEFAULT_GUARD_SYMBOLS);
    let unit = kappa * pulse_autocorrelation(0.0, &params);
    let equalizer = mmse_equalizer_design(&estimate, sigma_z2 / (unit * unit), 15)?;

    println!("equalizer taps (center {}):", equalizer.center());
    for (j, w) in equalizer.coefficients.iter().enumerate() {
        println!("  w[{:>2}] = {w:>9.5}", j as i64 - equalizer.center() as i64);
    }

    let data_windows = &windows[pilot.len()..];
    let truth = data.as_slice();
    for (method, context) in [
        (DetectionMethod::Zero, DetectionContext::Zero),
        (DetectionMethod::Mmse, DetectionContext::Mmse { equalizer: &equalizer }),
    ] {
        let decoded = detect_frame(data_windows, method, &context)?;
        let errors =
            decoded.as_slice().iter().zip(truth).filter(|(a, b)| a != b).count();
        println!(
            "{method:<12} {errors:>4} errors / {} bits at Eb/N0 = {ebn0} dB",
            truth.len()
        );
    }
    Ok(())
}
