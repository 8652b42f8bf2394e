//! Time-varying scenario: the fading exponent is redrawn every frame and
//! the receiver re-estimates the channel and retrains from pilots alone.

use cbwcs::harness::{run_experiment, ExperimentSpec, Scenario};
use cbwcs::receiver::DetectionMethod;

fn main() -> cbwcs::Result<()> {
    let spec = ExperimentSpec {
        scenario: Scenario::TimeVarying,
        gamma_low: 0.3,
        gamma_high: 0.9,
        ebn0_grid: vec![Some(8.0), Some(12.0)],
        methods: vec![
            DetectionMethod::Suboptimal,
            DetectionMethod::Method2,
            DetectionMethod::Mmse,
        ],
        frames: 2,
        master_seed: 17,
        ..ExperimentSpec::default()
    };
    println!(
        "gamma ~ U[{}, {}] per frame, {} frames, channel re-estimated each frame",
        spec.gamma_low, spec.gamma_high, spec.frames
    );
    let records = run_experiment(&spec)?;
    println!("{:<12} {:>8} {:>8} {:>8} {:>12}", "method", "Eb/N0", "bits", "errors", "BER");
    for r in &records {
        println!(
            "{:<12} {:>8} {:>8} {:>8} {:>12.3e}",
            r.method.tag(),
            r.ebn0_db.map_or("inf".to_string(), |db| format!("{db}")),
            r.bits,
            r.errors,
            r.ber
        );
    }
    Ok(())
}
