//! Mean growth rate with a 95% band of individual rates, from a fitted model.
//!
//! cargo run --release --example rate_curve

use jblcsm::estimation::{fit, FitConfig};
use jblcsm::scores::mean_rate_band;
use jblcsm::simulation::{condition_grid, replication_data};
use jblcsm::ModelSpec;

fn main() -> jblcsm::Result<()> {
    let cond = condition_grid()[16];
    let data = replication_data(&cond, 5, 0)?.data;
    let result = fit(&data, &ModelSpec::full(), &FitConfig::default())?;

    let times: Vec<f64> = (0..=18).map(|k| 0.5 * k as f64).collect();
    println!("{:>5} {:>9} {:>9} {:>9}", "time", "rate", "lower", "upper");
    for p in mean_rate_band(&result.estimates, &times, 0.95)? {
        println!("{:5.1} {:9.3} {:9.3} {:9.3}", p.time, p.mean_rate, p.lower, p.upper);
    }
    Ok(())
}
