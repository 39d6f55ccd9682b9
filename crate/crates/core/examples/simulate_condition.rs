//! One design condition with a small number of replications, printing
//! relative bias, RMSE and coverage for the proposed full model.
//!
//! cargo run --release --example simulate_condition [condition] [reps]

use jblcsm::simulation::{condition_grid, run_condition, standard_models, RunOptions};

fn main() -> jblcsm::Result<()> {
    let mut args = std::env::args().skip(1);
    let id: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(16);
    let reps: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(10);
    let cond = condition_grid()[id];
    let opts = RunOptions {
        replications: reps,
        ..RunOptions::default()
    };
    let run = run_condition(&cond, &standard_models(), &opts)?;
    println!("{}: {} retained of {} attempts", cond.label(), reps, run.attempts());
    for m in &run.models {
        println!("  {:<17} improper {}", m.name, run.tally(&m.name).unwrap_or_default());
    }

    let s = run.summary("proposed_full").expect("model is in the standard set");
    println!("\n{:<10} {:>9} {:>9} {:>9} {:>9}", "parameter", "truth", "bias", "rmse", "coverage");
    for p in &s.parameters {
        println!("{:<10} {:9.4} {:9.4} {:9.4} {:9.2}", p.name, p.truth, p.bias, p.rmse, p.coverage);
    }
    Ok(())
}
