//! Write a simulated data set to CSV, read it back and fit the reduced and
//! full models.
//!
//! cargo run --release --example fit_csv

use jblcsm::estimation::{fit, fit_nested, FitConfig};
use jblcsm::io::{ingest_csv, write_wide_file};
use jblcsm::simulation::{condition_grid, replication_data};
use jblcsm::ModelSpec;

fn main() -> jblcsm::Result<()> {
    let cond = condition_grid()[16];
    let dir = std::env::temp_dir().join("jblcsm_fit_csv");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("data.csv");
    write_wide_file(&path, &replication_data(&cond, 1, 0)?.data)?;

    let data = ingest_csv(&path)?;
    println!("{} individuals, {} waves", data.len(), data.n_waves());

    let config = FitConfig::default();
    let reduced = fit(&data, &ModelSpec::reduced(), &config)?;
    let full = fit_nested(&data, &ModelSpec::full(), &config, &reduced)?;

    for r in [&reduced, &full] {
        println!(
            "\n{}: -2ll {:.2}  AIC {:.2}  BIC {:.2}  ({:?})",
            r.spec.label(),
            r.indices.minus2ll,
            r.indices.aic,
            r.indices.bic,
            r.status
        );
        let se = r.se.clone().unwrap_or_default();
        for (i, (name, v)) in r.parameter_names().iter().zip(r.values()).enumerate() {
            match se.get(i) {
                Some(s) => println!("  {name:<10} {v:>10.4}  ({s:.4})"),
                None => println!("  {name:<10} {v:>10.4}"),
            }
        }
    }
    Ok(())
}
