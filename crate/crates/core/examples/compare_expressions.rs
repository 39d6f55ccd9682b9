//! Midpoint against right-endpoint rate expressions on the same data: the
//! endpoint version misplaces the rate and distorts the curvature mean.
//!
//! cargo run --release --example compare_expressions

use jblcsm::estimation::{fit, FitConfig};
use jblcsm::simulation::{condition_grid, replication_data, truth_for};
use jblcsm::{Expression, ModelSpec};

fn main() -> jblcsm::Result<()> {
    let cond = condition_grid()[16];
    let data = replication_data(&cond, 9, 0)?.data;
    let config = FitConfig::default();
    let truth = truth_for(&cond, &ModelSpec::full());

    let mid = fit(&data, &ModelSpec::full(), &config)?;
    let end = fit(&data, &ModelSpec::full().with_expression(Expression::RightEndpoint), &config)?;
    println!("{:<10} {:>9} {:>10} {:>10}", "parameter", "truth", "midpoint", "endpoint");
    for (i, name) in mid.parameter_names().iter().enumerate() {
        println!("{name:<10} {:9.4} {:10.4} {:10.4}", truth[i], mid.values()[i], end.values()[i]);
    }
    println!("\n-2ll  midpoint {:.2}  endpoint {:.2}", mid.indices.minus2ll, end.indices.minus2ll);
    Ok(())
}
