//! Command-line front end: `simulate` runs a BER experiment from a config
//! file, `flops` prints the complexity tables, `calibrate` reports the
//! receiver alignment and coefficient-probe agreement.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cbwcs::channel::{MultipathChannel, PathTap};
use cbwcs::complexity::{consistency_report, cost_table, CostParams};
use cbwcs::harness::{emit_csv, emit_csv_string, emit_plot_data, parse_config, run_experiment};
use cbwcs::receiver::DetectionMethod;
use cbwcs::threshold::{isi_coefficient, matched_filter_contribution};
use cbwcs::waveform::{
    calibrate_decision_index, CsfParams, DEFAULT_DECISION_INDEX, DEFAULT_OVERSAMPLING,
};

#[derive(Parser)]
#[command(name = "cbwcs", about = "Chaotic baseband wireless communication simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a BER experiment and emit CSV records.
    Simulate(SimulateArgs),
    /// Print the per-frame and per-symbol computational cost tables.
    Flops(FlopsArgs),
    /// Check receiver alignment and the interference closed form.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment config file (key=value lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's master_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's frame count.
    #[arg(long)]
    frames: Option<usize>,
    /// Override the config's method list (comma-separated tags).
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<DetectionMethod>>,
    /// Directory for per-method `<tag>.dat` plot series.
    #[arg(long)]
    plot_data: Option<PathBuf>,
}

#[derive(Args)]
struct FlopsArgs {
    /// Path count entering the iterative method's threshold lookups.
    #[arg(long, default_value_t = 2)]
    paths: u64,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Oversampling factor of the coefficient probe.
    #[arg(long, default_value_t = 512)]
    oversampling: usize,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> cbwcs::Result<()> {
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Flops(args) => flops(args),
        Command::Calibrate(args) => calibrate(args),
    }
}

fn simulate(args: SimulateArgs) -> cbwcs::Result<()> {
    let mut spec = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            parse_config(&text)?
        }
        None => Default::default(),
    };
    if let Some(seed) = args.seed {
        spec.master_seed = seed;
    }
    if let Some(frames) = args.frames {
        spec.frames = frames;
    }
    if let Some(methods) = args.methods {
        spec.methods = methods;
    }
    spec.validate()?;
    let records = run_experiment(&spec)?;
    match &args.out {
        Some(path) => emit_csv(&records, path)?,
        None => print!("{}", emit_csv_string(&records)),
    }
    if let Some(dir) = &args.plot_data {
        std::fs::create_dir_all(dir)?;
        for path in emit_plot_data(&records, dir)? {
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn flops(args: FlopsArgs) -> cbwcs::Result<()> {
    let rows = cost_table(args.paths)?;
    println!("Per-frame cost breakdown");
    println!("{:<22} {:>18} {:>18}", "method", "products", "summations");
    for row in &rows {
        println!(
            "{:<22} {:>18} {:>18}",
            row.method, row.frame.products, row.frame.summations
        );
    }
    println!();
    println!("Average cost per decoded symbol");
    println!("{:<22} {:>18} {:>18}", "method", "products", "summations");
    for row in &rows {
        println!(
            "{:<22} {:>18.3} {:>18.3}",
            row.method, row.products_per_symbol, row.summations_per_symbol
        );
    }
    println!();
    println!("frame CSV");
    println!("method,products,summations");
    for row in &rows {
        println!("{},{},{}", row.method, row.frame.products, row.frame.summations);
    }
    println!();
    println!("per-symbol CSV");
    println!("method,products_per_symbol,summations_per_symbol");
    for row in &rows {
        println!("{},{:.3},{:.3}", row.method, row.products_per_symbol, row.summations_per_symbol);
    }
    println!();
    let p2 = CostParams::method2_reference();
    let r2 = consistency_report(&p2, true)?;
    let p1 = CostParams::method1_reference(args.paths);
    let r1 = consistency_report(&p1, false)?;
    println!("Cross-check of the two published cost derivations (tabulated minus general):");
    println!(
        "  one-shot:  products {:+}, summations {:+}",
        r2.products_delta, r2.summations_delta
    );
    println!(
        "  iterative: products {:+}, summations {:+}",
        r1.products_delta, r1.summations_delta
    );
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> cbwcs::Result<()> {
    let params = CsfParams::default();
    let idx = calibrate_decision_index(&params, DEFAULT_OVERSAMPLING)?;
    println!(
        "decision index: calibrated {idx} of {DEFAULT_OVERSAMPLING} (configured {DEFAULT_DECISION_INDEX})"
    );
    if idx != DEFAULT_DECISION_INDEX {
        return Err(cbwcs::Error::Misconfigured(format!(
            "calibrated decision index {idx} disagrees with the configured {DEFAULT_DECISION_INDEX}"
        )));
    }

    let n_s = args.oversampling;
    let anchor = PathTap { gain: 1.0, delay: 0.0 };
    let scale = isi_coefficient(0, 1, &MultipathChannel::identity(), &params)?
        / matched_filter_contribution(&anchor, 1, &params, n_s)?;
    println!("probe amplitude calibration at (delay 0, offset 1): {scale:.6}");
    println!(
        "{:>6} {:>4} {:>14} {:>14} {:>10}",
        "delay", "i", "closed", "probe", "abs err"
    );
    let mut worst: f64 = 0.0;
    for delay in [0.0, 0.25, 0.5, 1.0] {
        let tap = PathTap { gain: 1.0, delay };
        let channel = if delay == 0.0 {
            MultipathChannel::new(vec![tap])?
        } else {
            MultipathChannel::new(vec![PathTap { gain: 1e-30, delay: 0.0 }, tap])?
        };
        let l = usize::from(delay != 0.0);
        for i in (-4i64..=4).filter(|&i| i != 0) {
            let closed = isi_coefficient(l, i, &channel, &params)?;
            let probed = scale * matched_filter_contribution(&tap, i, &params, n_s)?;
            let err = (closed - probed).abs();
            worst = worst.max(err);
            println!("{delay:>6} {i:>4} {closed:>14.8} {probed:>14.8} {err:>10.2e}");
        }
    }
    println!("worst absolute deviation: {worst:.2e} (oversampling {n_s})");
    Ok(())
}
