//! Prints the chaotic shape-forming pulse and its autocorrelation on a
//! coarse grid. The pulse rises as a damped oscillation from the left,
//! peaks inside its own symbol period, and vanishes after it.

use cbwcs::threshold::pulse_autocorrelation;
use cbwcs::waveform::{basis_pulse, CsfParams};

fn main() {
    let params = CsfParams::default();
    println!("{:>7} {:>12} {:>12}", "t", "p(t)", "R(t)");
    let mut t = -4.0;
    while t <= 2.0 + 1e-9 {
        println!(
            "{t:>7.2} {:>12.6} {:>12.6}",
            basis_pulse(t, &params),
            pulse_autocorrelation(t, &params)
        );
        t += 0.25;
    }
    println!();
    println!("R(0) = {:.12}", pulse_autocorrelation(0.0, &params));
    println!("R(1) = {:.12}", pulse_autocorrelation(1.0, &params));
    println!("R(2) = {:.12}  (halves once per symbol in the tail)", pulse_autocorrelation(2.0, &params));
}
