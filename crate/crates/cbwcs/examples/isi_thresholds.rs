//! Tabulates the interference coefficients of a two-path channel and shows
//! how the optimal decoding threshold moves with the neighboring symbols.

use cbwcs::channel::{channel_from_fading, default_delays, FadingLaw};
use cbwcs::threshold::{
    build_isi_table, one_future_threshold, optimal_threshold, suboptimal_threshold,
    ThresholdConfig,
};
use cbwcs::waveform::CsfParams;

fn main() -> cbwcs::Result<()> {
    let params = CsfParams::default();
    let channel = channel_from_fading(2, FadingLaw::new(0.6)?, &default_delays(2))?;
    let config = ThresholdConfig::default();
    let table = build_isi_table(&channel, &params, &config)?;

    println!("interference coefficients (path x symbol offset):");
    print!("{:>6}", "l\\i");
    for i in (-(config.past_depth as i64)..=config.future_depth as i64).filter(|&i| i != 0) {
        print!(" {i:>9}");
    }
    println!();
    for l in 0..2 {
        print!("{l:>6}");
        for i in (-(config.past_depth as i64)..=config.future_depth as i64).filter(|&i| i != 0) {
            print!(" {:>9.5}", table.get(l, i)?);
        }
        println!();
    }

    // threshold variants for a handful of neighborhoods
    println!();
    println!(
        "{:>14} {:>8} {:>10} {:>12} {:>10}",
        "past (old..new)", "future", "optimal", "suboptimal", "one-future"
    );
    let cases: [(&[i8; 3], &[i8; 3]); 4] = [
        (&[1, 1, 1], &[1, 1, 1]),
        (&[-1, -1, -1], &[1, 1, 1]),
        (&[1, -1, 1], &[-1, 1, -1]),
        (&[-1, 1, -1], &[-1, -1, -1]),
    ];
    let fmt = |s: &[i8]| {
        s.iter().map(|v| if *v > 0 { "+" } else { "-" }).collect::<String>()
    };
    for (past, future) in cases {
        let opt = optimal_threshold(past, future, &table)?;
        let sub = suboptimal_threshold(past, &table)?;
        let one = one_future_threshold(past, future[0], &table)?;
        println!(
            "{:>14} {:>8} {opt:>10.5} {sub:>12.5} {one:>10.5}",
            fmt(past),
            fmt(future)
        );
    }
    Ok(())
}
