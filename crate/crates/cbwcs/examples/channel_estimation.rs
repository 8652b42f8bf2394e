//! Least-squares channel estimation from a noisy pilot block: recovers the
//! taps of a three-path fading channel and prints them against the truth.

use cbwcs::channel::{
    add_awgn, apply_multipath, channel_from_fading, default_delays, energy_per_bit, FadingLaw,
    NoiseSpec,
};
use cbwcs::esn::build_training_symbols;
use cbwcs::receiver::ls_channel_estimate;
use cbwcs::waveform::{synthesize_baseband, CsfParams, DEFAULT_GUARD_SYMBOLS, DEFAULT_OVERSAMPLING};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cbwcs::Result<()> {
    let params = CsfParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let truth = channel_from_fading(3, FadingLaw::new(0.5)?, &default_delays(3))?;
    let pilot = build_training_symbols(&mut rng);
    let x = synthesize_baseband(&pilot, &params, DEFAULT_OVERSAMPLING, DEFAULT_GUARD_SYMBOLS)?;
    let eb = energy_per_bit(&x, params.f(), pilot.len())?;
    let clean = apply_multipath(&x, &truth)?;

    for ebn0 in [20.0, 10.0] {
        let received = add_awgn(&clean, &NoiseSpec::EbN0Db(ebn0), eb, params.f(), &mut rng)?;
        let estimate = ls_channel_estimate(&x, &received, 3 * DEFAULT_OVERSAMPLING)?;
        println!("Eb/N0 = {ebn0} dB: residual {:.4}", estimate.residual);
        println!("{:>10} {:>12} {:>12}", "delay", "true gain", "estimated");
        for tap in truth.taps() {
            let delay_samples = (tap.delay * DEFAULT_OVERSAMPLING as f64).round() as usize;
            let found = estimate
                .taps
                .iter()
                .find(|t| t.delay_samples == delay_samples)
                .map_or(0.0, |t| t.gain);
            println!("{:>10.2} {:>12.6} {:>12.6}", tap.delay, tap.gain, found);
        }
        println!();
    }
    Ok(())
}
