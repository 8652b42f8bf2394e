//! Trains the one-shot threshold reservoir on a noisy pilot frame and
//! reports how well the readout reproduces the genie thresholds, both on
//! the training block and on held-out data symbols.

use cbwcs::channel::{
    add_awgn, apply_multipath, channel_from_fading, default_delays, energy_per_bit, FadingLaw,
    NoiseSpec,
};
use cbwcs::esn::{build_training_symbols, init_weights, predict_threshold, EsnConfig};
use cbwcs::harness::train_method2_readout;
use cbwcs::threshold::{build_isi_table, decision_scale, genie_thresholds, ThresholdConfig};
use cbwcs::waveform::{
    extract_windows, matched_filter, synthesize_baseband, CsfParams, SymbolSequence,
    DEFAULT_DECISION_INDEX, DEFAULT_GUARD_SYMBOLS, DEFAULT_OVERSAMPLING,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> cbwcs::Result<()> {
    let params = CsfParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    // pilot + data frame over a noisy two-path channel
    let pilot = build_training_symbols(&mut rng);
    let data_bits: Vec<bool> = (0..500).map(|_| rng.gen()).collect();
    let data = SymbolSequence::from_bits(&data_bits);
    let all = pilot.concat(&data);
    let channel = channel_from_fading(2, FadingLaw::new(0.6)?, &default_delays(2))?;
    let x = synthesize_baseband(&all, &params, DEFAULT_OVERSAMPLING, DEFAULT_GUARD_SYMBOLS)?;
    let eb = energy_per_bit(&x, params.f(), all.len())?;
    let clean = apply_multipath(&x, &channel)?;
    let received = add_awgn(&clean, &NoiseSpec::EbN0Db(12.0), eb, params.f(), &mut rng)?;
    let y = matched_filter(&received, &params).scaled(decision_scale(&params));
    let windows = extract_windows(&y, all.len(), DEFAULT_DECISION_INDEX)?;

    let table = build_isi_table(&channel, &params, &ThresholdConfig::default())?;
    let teachers = genie_thresholds(&all, &table)?;

    let config = EsnConfig { n_max: pilot.len(), seed: 42, ..EsnConfig::default() };
    let base = init_weights(&config)?;
    let (trained, mut state) = train_method2_readout(
        &base,
        &windows[..pilot.len()],
        &teachers[..pilot.len()],
    )?;

    // free-run over the data block: feed back the network's own predictions
    let mut se = 0.0;
    let mut agree = 0usize;
    for (w, &theta_true) in windows[pilot.len()..].iter().zip(&teachers[pilot.len()..]) {
        let u = DVector::from_row_slice(&w.values);
        let (theta_hat, next) = predict_threshold(&state, &u, &trained)?;
        se += (theta_hat - theta_true) * (theta_hat - theta_true);
        let a = w.decision_sample() - theta_hat >= 0.0;
        let b = w.decision_sample() - theta_true >= 0.0;
        agree += usize::from(a == b);
        state = next;
    }
    let n = data.len() as f64;
    let teacher_sd = {
        let t = &teachers[pilot.len()..];
        let mean = t.iter().sum::<f64>() / n;
        (t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
    };
    println!("reservoir: {} units, {} inputs, trained on {} pilots", config.n, config.k, pilot.len());
    println!("held-out threshold RMSE: {:.5} (teacher sd {:.5})", (se / n).sqrt(), teacher_sd);
    println!(
        "decision agreement with the genie threshold: {agree}/{} = {:.2}%",
        data.len(),
        100.0 * agree as f64 / n
    );
    Ok(())
}
