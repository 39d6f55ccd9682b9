use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jblcsm::io::{ingest_csv, write_wide_file};
use jblcsm::simulation::{condition_grid, replication_data};

fn jblcsm(args: &[&str], extra: &[&Path]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jblcsm"))
        .args(args)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn sample_csv(dir: &Path) -> PathBuf {
    let cond = condition_grid().into_iter().min_by_key(|c| c.n).unwrap();
    let path = dir.join("data.csv");
    write_wide_file(&path, &replication_data(&cond, 2, 0).unwrap().data).unwrap();
    path
}

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn fit_writes_estimates_for_the_reduced_model() {
    let tmp = tempfile::tempdir().unwrap();
    let data = sample_csv(tmp.path());
    let out = tmp.path().join("out");
    let o = jblcsm(&["fit", "--model", "reduced", "--data"], &[&data, Path::new("--out"), &out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let (header, rows) = read_rows(&out.join("estimates.csv"));
    assert_eq!(header, ["parameter", "estimate", "se", "p_value"]);
    assert_eq!(rows.len(), 11);
    assert_eq!(rows[0][0], "mu_eta0");
    for r in &rows {
        assert!(r[1].parse::<f64>().unwrap().is_finite());
    }
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    assert!(fit.is_object());
    assert!(out.join("config.json").exists());
}

#[test]
fn scores_and_rates_have_expected_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = sample_csv(tmp.path());
    let dataset = ingest_csv(&data).unwrap();
    let (n, j) = (dataset.len(), dataset.n_waves());

    let out = tmp.path().join("scores");
    let o = jblcsm(&["scores", "--data"], &[&data, Path::new("--out"), &out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_rows(&out.join("rates_individual.csv"));
    assert_eq!(header, ["id", "interval", "time", "rate", "status"]);
    assert_eq!(rows.len(), n * (j - 1));
    let (header, rows) = read_rows(&out.join("factor_scores.csv"));
    assert_eq!(header, ["id", "latent", "score", "status"]);
    // four growth factors, J true scores and J - 1 rates per person
    assert_eq!(rows.len(), n * (4 + j + j - 1));

    let out = tmp.path().join("rates");
    let o = jblcsm(&["rates", "--grid", "0:9:0.5", "--data"], &[&data, Path::new("--out"), &out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_rows(&out.join("rates_mean.csv"));
    assert_eq!(header, ["time", "mean_rate", "lower95", "upper95"]);
    assert_eq!(rows.len(), 19);
    for r in &rows {
        let v: Vec<f64> = r.iter().map(|x| x.parse().unwrap()).collect();
        assert!(v[2] <= v[1] && v[1] <= v[3]);
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");

    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "id,y1,y2,t1,t2\n1,3.0,oops,0,1\n").unwrap();
    let o = jblcsm(&["fit", "--data"], &[&bad, Path::new("--out"), &out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 2"));

    let missing = tmp.path().join("missing.csv");
    assert_eq!(jblcsm(&["fit", "--data"], &[&missing]).status.code(), Some(1));

    let data = sample_csv(tmp.path());
    let config = tmp.path().join("config.json");
    std::fs::write(&config, r#"{"fit": {"max_iterations": 1, "max_restarts": 0}}"#).unwrap();
    let o = jblcsm(&["fit", "--data"], &[&data, Path::new("--config"), &config, Path::new("--out"), &out]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    assert_eq!(jblcsm(&["simulate", "--conditions", "99"], &[]).status.code(), Some(1));
}

#[test]
fn simulate_output_reads_back() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let o = jblcsm(&["simulate", "--reps", "1", "--seed", "4", "--conditions", "0", "--out"], &[&out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let cond = condition_grid()[0];
    let dir = out.join(cond.label());
    let data = ingest_csv(dir.join("dataset_first.csv")).unwrap();
    assert_eq!(data, replication_data(&cond, 4, 0).unwrap().data);

    let (header, rows) = read_rows(&out.join("improper_tally.csv"));
    assert_eq!(header, ["condition", "label", "model", "tally", "retained", "attempts"]);
    assert_eq!(rows.len(), 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
    assert!(dir.join(format!("metrics_{}.csv", cond.label())).exists());
}
