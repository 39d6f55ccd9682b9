//! Accuracy of the first-order expansion of the rate around the mean
//! acceleration: the error shrinks about fourfold when the deviation halves.
//!
//! cargo run --release --example taylor_linearization

use jblcsm::model::{jb_rate, midpoints, rate_loadings, GrowthFactors};
use jblcsm::{ModelSpec, Schedule};

fn main() -> jblcsm::Result<()> {
    let (mu_g, mu_2, mu_1) = (-0.7, -30.0, 2.5);
    let schedule = Schedule::new((0..10).map(f64::from).collect())?;
    let lr = rate_loadings(&schedule, mu_g, mu_2, &ModelSpec::full())?;
    let mids = midpoints(&schedule);

    let mut previous = None;
    for delta in [0.16, 0.08, 0.04, 0.02, 0.01] {
        let f = GrowthFactors::new(50.0, mu_1, mu_2, mu_g + delta)?;
        let mut sq = 0.0;
        for (r, &t) in mids.iter().enumerate() {
            let approx = lr[(r, 0)] * mu_1 + lr[(r, 1)] * mu_2 + lr[(r, 2)] * delta;
            sq += (jb_rate(&f, t)? - approx).powi(2);
        }
        let err = sq.sqrt();
        match previous {
            Some(p) => println!("delta {delta:.2}  error {err:.3e}  ratio {:.3}", p / err),
            None => println!("delta {delta:.2}  error {err:.3e}"),
        }
        previous = Some(err);
    }
    Ok(())
}
