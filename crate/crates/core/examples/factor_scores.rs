//! Regression factor scores, true scores and interval rates for a few
//! individuals, compared with the generating factors.
//!
//! cargo run --release --example factor_scores

use jblcsm::estimation::{fit, fit_nested, FitConfig};
use jblcsm::scores::factor_scores;
use jblcsm::simulation::{condition_grid, replication_data};
use jblcsm::ModelSpec;

fn main() -> jblcsm::Result<()> {
    let cond = condition_grid()[16];
    let generated = replication_data(&cond, 3, 0)?;
    let config = FitConfig::default();
    let reduced = fit(&generated.data, &ModelSpec::reduced(), &config)?;
    let spec = ModelSpec::full();
    let full = fit_nested(&generated.data, &spec, &config, &reduced)?;

    let scores = factor_scores(&generated.data, &full, &spec)?;
    for (s, truth) in scores.iter().zip(&generated.factors).take(5) {
        let Some(set) = &s.scores else {
            println!("{}: not scored", s.id);
            continue;
        };
        let g = set.growth_factors;
        println!(
            "id {:>3}  eta0 {:7.3} ({:7.3})  eta1 {:6.3} ({:6.3})  eta2 {:8.3} ({:8.3})  gamma {:6.3} ({:6.3})",
            s.id, g[0], truth.eta0, g[1], truth.eta1, g[2], truth.eta2, g[3], truth.gamma
        );
        let rates: Vec<String> = set.rates.iter().map(|r| format!("{r:.2}")).collect();
        println!("        rates [{}]", rates.join(", "));
    }
    Ok(())
}
