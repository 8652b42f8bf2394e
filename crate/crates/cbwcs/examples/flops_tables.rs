//! Computational cost accounting for both reservoir detectors: per-frame
//! operation counts, the per-symbol averages, and the cross-check between
//! the tabulated and the general-form derivations.

use cbwcs::complexity::{
    consistency_report, cost_table, method1_frame_cost, method1_prediction_cost,
    method1_threshold_cost, method1_training_cost, method2_frame_cost, method2_prediction_cost,
    method2_training_cost, CostParams,
};

fn main() -> cbwcs::Result<()> {
    let l = 2u64;
    let p1 = CostParams::method1_reference(l);
    let p2 = CostParams::method2_reference();

    println!("iterative sample predictor (N={}, K={}, L={l}):", p1.n, p1.k);
    println!("  training   {:?}", method1_training_cost(&p1)?);
    println!("  prediction {:?}  (per symbol)", method1_prediction_cost(&p1)?);
    println!("  threshold  {:?}  (per symbol)", method1_threshold_cost(&p1)?);
    println!("  frame      {:?}", method1_frame_cost(&p1)?);
    println!();
    println!("one-shot threshold predictor (N={}, K={}):", p2.n, p2.k);
    println!("  training   {:?}", method2_training_cost(&p2)?);
    println!("  prediction {:?}  (per symbol)", method2_prediction_cost(&p2)?);
    println!("  frame      {:?}", method2_frame_cost(&p2)?);
    println!();

    println!("average cost per decoded symbol:");
    for row in cost_table(l)? {
        println!(
            "  {:<10} {:>12.3} products {:>12.3} summations",
            row.method, row.products_per_symbol, row.summations_per_symbol
        );
    }
    println!();

    let r1 = consistency_report(&p1, false)?;
    let r2 = consistency_report(&p2, true)?;
    println!("tabulated minus general derivation:");
    println!("  iterative: {:+} products, {:+} summations", r1.products_delta, r1.summations_delta);
    println!("  one-shot:  {:+} products, {:+} summations", r2.products_delta, r2.summations_delta);
    println!(
        "  (the one-shot summation gap is the documented 2(N+K)(N+K+1) bookkeeping difference)"
    );
    Ok(())
}
