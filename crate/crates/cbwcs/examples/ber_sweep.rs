//! Small bit-error-rate sweep over a known two-path channel, comparing all
//! five detectors. Short on purpose; raise `frames` for smooth curves.

use cbwcs::harness::{emit_csv_string, run_experiment, ExperimentSpec};

fn main() -> cbwcs::Result<()> {
    let spec = ExperimentSpec {
        ebn0_grid: [0.0, 4.0, 8.0, 12.0].iter().map(|&db| Some(db)).collect(),
        frames: 3,
        master_seed: 1,
        ..ExperimentSpec::default()
    };
    println!(
        "scenario {} | {} paths, gamma {} | {} frames x {} data bits",
        spec.scenario,
        spec.paths,
        spec.gamma,
        spec.frames,
        spec.layout().data_bits
    );
    let records = run_experiment(&spec)?;
    print!("{}", emit_csv_string(&records));
    Ok(())
}
