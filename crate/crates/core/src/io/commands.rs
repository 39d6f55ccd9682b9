use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::{ingest_csv, num, write_table, write_wide_file};
use crate::error::{Error, Result};
use crate::estimation::{fit, fit_nested, wald_p_value, Dataset, FitResult, ImproperFlags};
use crate::model::{evaluation_times, Expression, Framework, ModelSpec};
use crate::scores::{factor_scores, mean_rate_band};
use crate::simulation::{
    condition_grid, replication_data, run_condition, standard_models, ConditionRun, MetricScale, RunOptions,
};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Success,
    InputError,
    ConvergenceFailure,
    Pathology,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::InputError => 1,
            ExitStatus::ConvergenceFailure => 2,
            ExitStatus::Pathology => 3,
        }
    }

    pub fn from_error(e: &Error) -> Self {
        match e {
            Error::Pathology { .. } => ExitStatus::Pathology,
            _ => ExitStatus::InputError,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutcome {
    pub status: ExitStatus,
    pub files: Vec<PathBuf>,
}

fn prepare_out(config: &RunConfig) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(&config.out)?;
    Ok(vec![config.write_to(&config.out)?])
}

/// Full models are fitted after their reduced counterpart so that the full
/// log-likelihood never falls below it.
fn fit_model(data: &Dataset, config: &RunConfig) -> Result<FitResult> {
    let spec = config.spec();
    if spec.is_reduced() {
        return fit(data, &spec, &config.fit);
    }
    let reduced_spec = spec.with_acceleration(crate::model::Acceleration::Fixed);
    let reduced = fit(data, &reduced_spec, &config.fit)?;
    fit_nested(data, &spec, &config.fit, &reduced)
}

#[derive(Serialize)]
struct EstimateRow {
    parameter: String,
    estimate: f64,
    se: Option<f64>,
    p_value: Option<f64>,
}

#[derive(Serialize)]
struct FitReport {
    model: String,
    spec: ModelSpec,
    n: usize,
    waves: usize,
    converged: bool,
    loglik: f64,
    minus2ll: f64,
    aic: f64,
    bic: f64,
    n_params: usize,
    improper: ImproperFlags,
    attempts: usize,
    iterations: usize,
    estimates: Vec<EstimateRow>,
}

fn estimate_rows(result: &FitResult) -> Vec<EstimateRow> {
    result
        .parameter_names()
        .into_iter()
        .zip(result.values())
        .enumerate()
        .map(|(i, (parameter, estimate))| {
            let se = result.se.as_ref().map(|s| s[i]);
            EstimateRow {
                parameter,
                estimate,
                se,
                p_value: se.map(|s| wald_p_value(estimate, s)),
            }
        })
        .collect()
}

fn write_fit_report(dir: &Path, data: &Dataset, result: &FitResult) -> Result<PathBuf> {
    let report = FitReport {
        model: result.spec.label(),
        spec: result.spec,
        n: data.len(),
        waves: data.n_waves(),
        converged: result.converged(),
        loglik: result.loglik,
        minus2ll: result.indices.minus2ll,
        aic: result.indices.aic,
        bic: result.indices.bic,
        n_params: result.n_params,
        improper: result.improper,
        attempts: result.attempts,
        iterations: result.iterations,
        estimates: estimate_rows(result),
    };
    let path = dir.join("fit.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(path)
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(|| num(f64::NAN), num)
}

fn status_of(result: &FitResult) -> ExitStatus {
    if result.converged() {
        ExitStatus::Success
    } else {
        ExitStatus::ConvergenceFailure
    }
}

/// Fit one model: `estimates.csv` (parameter, estimate, se, p_value) and
/// `fit.json`.
pub fn cmd_fit(config: &RunConfig) -> Result<CommandOutcome> {
    let data = ingest_csv(config.data_path()?)?;
    let mut files = prepare_out(config)?;
    let result = fit_model(&data, config)?;
    let rows: Vec<Vec<String>> = estimate_rows(&result)
        .into_iter()
        .map(|r| vec![r.parameter, num(r.estimate), opt_num(r.se), opt_num(r.p_value)])
        .collect();
    files.push(write_table(
        &config.out.join("estimates.csv"),
        &["parameter", "estimate", "se", "p_value"],
        &rows,
    )?);
    files.push(write_fit_report(&config.out, &data, &result)?);
    Ok(CommandOutcome {
        status: status_of(&result),
        files,
    })
}

/// Regression factor scores in long format and the individual interval
/// rates, `n (J - 1)` rows. Individuals whose scores cannot be formed get
/// `NaN` values and status `failed`.
pub fn cmd_scores(config: &RunConfig) -> Result<CommandOutcome> {
    let data = ingest_csv(config.data_path()?)?;
    let mut files = prepare_out(config)?;
    let result = fit_model(&data, config)?;
    files.push(write_fit_report(&config.out, &data, &result)?);
    if !result.converged() {
        return Ok(CommandOutcome {
            status: ExitStatus::ConvergenceFailure,
            files,
        });
    }
    let spec = config.spec();
    let j = data.n_waves();
    let latent_names: Vec<String> = ["eta0", "eta1", "eta2", "gamma"]
        .iter()
        .map(|s| s.to_string())
        .chain((1..=j).map(|k| format!("ly{k}")))
        .chain((1..j).map(|k| format!("dy{k}")))
        .collect();
    let rate_expression = match spec.framework {
        Framework::Lcsm => spec.expression,
        Framework::Lgc => Expression::Midpoint,
    };

    let scores = factor_scores(&data, &result, &spec)?;
    let mut score_rows = Vec::with_capacity(data.len() * latent_names.len());
    let mut rate_rows = Vec::with_capacity(data.len() * (j - 1));
    for (ind, s) in data.individuals().iter().zip(&scores) {
        let status = if s.scores.is_some() { "ok" } else { "failed" };
        let values: Vec<f64> = match &s.scores {
            Some(l) => l
                .growth_factors
                .iter()
                .chain(&l.true_scores)
                .chain(&l.rates)
                .copied()
                .collect(),
            None => vec![f64::NAN; latent_names.len()],
        };
        for (name, v) in latent_names.iter().zip(&values) {
            score_rows.push(vec![s.id.clone(), name.clone(), num(*v), status.to_string()]);
        }
        let times = evaluation_times(&ind.schedule, rate_expression);
        for (k, t) in times.iter().enumerate() {
            rate_rows.push(vec![
                s.id.clone(),
                (k + 1).to_string(),
                num(*t),
                num(values[4 + j + k]),
                status.to_string(),
            ]);
        }
    }
    files.push(write_table(
        &config.out.join("factor_scores.csv"),
        &["id", "latent", "score", "status"],
        &score_rows,
    )?);
    files.push(write_table(
        &config.out.join("rates_individual.csv"),
        &["id", "interval", "time", "rate", "status"],
        &rate_rows,
    )?);
    Ok(CommandOutcome {
        status: ExitStatus::Success,
        files,
    })
}

/// Parse `start:end:step` into an inclusive grid.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("grid must be start:end:step, got {spec:?}"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [start, end, step] = parts[..] else {
        return Err(bad());
    };
    if !(step > 0.0) || !(end >= start) || !start.is_finite() || !end.is_finite() {
        return Err(bad());
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    if count > 1_000_000 {
        return Err(Error::Config(format!("grid {spec:?} has too many points")));
    }
    Ok((0..count).map(|k| start + k as f64 * step).collect())
}

fn default_grid(data: &Dataset) -> Vec<f64> {
    let lo = data
        .individuals()
        .iter()
        .map(|i| i.schedule.times()[0])
        .fold(f64::INFINITY, f64::min);
    let hi = data
        .individuals()
        .iter()
        .map(|i| *i.schedule.times().last().expect("non-empty schedule"))
        .fold(f64::NEG_INFINITY, f64::max);
    (0..=100).map(|k| lo + (hi - lo) * k as f64 / 100.0).collect()
}

/// Mean growth rate with a 95% band of individual rates over a time grid.
pub fn cmd_rates(config: &RunConfig) -> Result<CommandOutcome> {
    let data = ingest_csv(config.data_path()?)?;
    let grid = match &config.grid {
        Some(g) => parse_grid(g)?,
        None => default_grid(&data),
    };
    let mut files = prepare_out(config)?;
    let result = fit_model(&data, config)?;
    files.push(write_fit_report(&config.out, &data, &result)?);
    if !result.converged() {
        return Ok(CommandOutcome {
            status: ExitStatus::ConvergenceFailure,
            files,
        });
    }
    let rows: Vec<Vec<String>> = mean_rate_band(&result.estimates, &grid, 0.95)?
        .iter()
        .map(|p| vec![num(p.time), num(p.mean_rate), num(p.lower), num(p.upper)])
        .collect();
    files.push(write_table(
        &config.out.join("rates_mean.csv"),
        &["time", "mean_rate", "lower95", "upper95"],
        &rows,
    )?);
    Ok(CommandOutcome {
        status: ExitStatus::Success,
        files,
    })
}

/// `all`, or comma-separated indices and inclusive ranges into the grid.
pub fn parse_conditions(spec: &str) -> Result<Vec<usize>> {
    let total = condition_grid().len();
    let spec = spec.trim();
    if spec.eq_ignore_ascii_case("all") {
        return Ok((0..total).collect());
    }
    let bad = |p: &str| Error::Config(format!("bad condition selector {p:?} (valid indices 0-{})", total - 1));
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (a, b) = match part.split_once('-') {
            Some((a, b)) => (a.trim(), b.trim()),
            None => (part, part),
        };
        let a: usize = a.parse().map_err(|_| bad(part))?;
        let b: usize = b.parse().map_err(|_| bad(part))?;
        if a > b || b >= total {
            return Err(bad(part));
        }
        out.extend(a..=b);
    }
    out.sort_unstable();
    out.dedup();
    if out.is_empty() {
        return Err(bad(spec));
    }
    Ok(out)
}

const METRIC_HEADER: [&str; 10] = [
    "model",
    "parameter",
    "truth",
    "scale",
    "mean_estimate",
    "bias",
    "empirical_se",
    "rmse",
    "coverage",
    "mc_se_bias",
];

fn scale_name(s: MetricScale) -> &'static str {
    match s {
        MetricScale::Relative => "relative",
        MetricScale::Absolute => "absolute",
    }
}

fn write_condition(dir: &Path, run: &ConditionRun, master_seed: u64) -> Result<Vec<PathBuf>> {
    let label = run.condition.label();
    let mut files = Vec::new();
    let rows: Vec<Vec<String>> = run
        .summaries
        .iter()
        .flat_map(|s| {
            s.parameters.iter().map(move |p| {
                vec![
                    s.model.clone(),
                    p.name.clone(),
                    num(p.truth),
                    scale_name(p.scale).to_string(),
                    num(p.mean_estimate),
                    num(p.bias),
                    num(p.empirical_se),
                    num(p.rmse),
                    num(p.coverage),
                    num(p.mc_se_bias),
                ]
            })
        })
        .collect();
    files.push(write_table(&dir.join(format!("metrics_{label}.csv")), &METRIC_HEADER, &rows)?);

    let mut rep_rows = Vec::new();
    for r in &run.records {
        for o in &r.outcomes {
            rep_rows.push(vec![
                r.attempt.to_string(),
                r.retained.to_string(),
                o.model.clone(),
                o.raw_converged.to_string(),
                o.raw_improper.negative_gamma_variance.to_string(),
                o.raw_improper.out_of_range_correlation.to_string(),
                o.substituted.to_string(),
                opt_num(o.fit.as_ref().map(|f| f.loglik)),
            ]);
        }
    }
    files.push(write_table(
        &dir.join("replications.csv"),
        &[
            "attempt",
            "retained",
            "model",
            "converged",
            "negative_psi_gg",
            "out_of_range_correlation",
            "substituted",
            "loglik",
        ],
        &rep_rows,
    )?);

    let first = replication_data(&run.condition, master_seed, 0)?;
    let path = dir.join("dataset_first.csv");
    write_wide_file(&path, &first.data)?;
    files.push(path);
    Ok(files)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median, minimum and maximum of each metric across conditions, per model,
/// parameter and scale.
fn summary_rows(runs: &[ConditionRun]) -> Vec<Vec<String>> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(usize, usize, &'static str, usize), Vec<f64>> = BTreeMap::new();
    let mut names: BTreeMap<(usize, usize), (String, String)> = BTreeMap::new();
    for run in runs {
        for (mi, s) in run.summaries.iter().enumerate() {
            for (pi, p) in s.parameters.iter().enumerate() {
                names.insert((mi, pi), (s.model.clone(), p.name.clone()));
                let scale = scale_name(p.scale);
                for (k, v) in [p.bias, p.empirical_se, p.rmse, p.coverage].into_iter().enumerate() {
                    groups.entry((mi, pi, scale, k)).or_default().push(v);
                }
            }
        }
    }
    const METRICS: [&str; 4] = ["bias", "empirical_se", "rmse", "coverage"];
    groups
        .into_iter()
        .map(|((mi, pi, scale, k), mut v)| {
            let (model, parameter) = names[&(mi, pi)].clone();
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let n = v.len();
            vec![
                model,
                parameter,
                scale.to_string(),
                METRICS[k].to_string(),
                num(median(&mut v)),
                num(lo),
                num(hi),
                n.to_string(),
            ]
        })
        .collect()
}

#[derive(Serialize)]
struct ConditionEntry {
    id: usize,
    label: String,
    attempts: usize,
    retained: usize,
    failed_attempts: Vec<u64>,
}

#[derive(Serialize)]
struct AbortedEntry {
    id: usize,
    label: String,
    reason: String,
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    reps: usize,
    config_sha256: String,
    models: Vec<String>,
    conditions: Vec<ConditionEntry>,
    aborted: Vec<AbortedEntry>,
}

/// Run the Monte Carlo design for the selected conditions. Each condition
/// gets its own directory; a condition stopped by the pathology guard is
/// reported and the batch continues, ending with exit status 3.
pub fn cmd_simulate(config: &RunConfig) -> Result<CommandOutcome> {
    let selected = parse_conditions(&config.conditions)?;
    if config.reps == 0 {
        return Err(Error::Config("--reps must be at least 1".into()));
    }
    let mut files = prepare_out(config)?;
    let grid = condition_grid();
    let models = standard_models();
    let opts = RunOptions {
        replications: config.reps,
        master_seed: config.seed,
        fit: config.fit,
        threads: None,
    };

    let mut runs = Vec::new();
    let mut aborted = Vec::new();
    for &id in &selected {
        let cond = grid[id];
        let dir = config.out.join(cond.label());
        std::fs::create_dir_all(&dir)?;
        files.push(config.write_to(&dir)?);
        match run_condition(&cond, &models, &opts) {
            Ok(run) => {
                files.extend(write_condition(&dir, &run, config.seed)?);
                runs.push(run);
            }
            Err(e @ Error::Pathology { .. }) => {
                let path = dir.join("aborted.txt");
                std::fs::write(&path, format!("{e}\n"))?;
                files.push(path);
                aborted.push(AbortedEntry {
                    id,
                    label: cond.label(),
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }

    let mut tally_rows = Vec::new();
    for run in &runs {
        for (m, t) in run.models.iter().zip(&run.tallies) {
            if m.spec.is_reduced() {
                continue;
            }
            tally_rows.push(vec![
                run.condition.id.to_string(),
                run.condition.label(),
                m.name.clone(),
                t.to_string(),
                run.retained().count().to_string(),
                run.attempts().to_string(),
            ]);
        }
    }
    files.push(write_table(
        &config.out.join("improper_tally.csv"),
        &["condition", "label", "model", "tally", "retained", "attempts"],
        &tally_rows,
    )?);
    files.push(write_table(
        &config.out.join("summary.csv"),
        &["model", "parameter", "scale", "metric", "median", "min", "max", "conditions"],
        &summary_rows(&runs),
    )?);

    let manifest = Manifest {
        tool: "jblcsm",
        version: env!("CARGO_PKG_VERSION"),
        seed: config.seed,
        reps: config.reps,
        config_sha256: hex::encode(Sha256::digest(config.to_json()?.as_bytes())),
        models: models.iter().map(|m| m.name.clone()).collect(),
        conditions: runs
            .iter()
            .map(|r| ConditionEntry {
                id: r.condition.id,
                label: r.condition.label(),
                attempts: r.attempts(),
                retained: r.retained().count(),
                failed_attempts: r.failed_attempts(),
            })
            .collect(),
        aborted,
    };
    let path = config.out.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    files.push(path);

    let status = if manifest.aborted.is_empty() {
        ExitStatus::Success
    } else {
        ExitStatus::Pathology
    };
    Ok(CommandOutcome { status, files })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_grid("0:1:0.25").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_grid("2:2:1").unwrap(), vec![2.0]);
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("0:1:0").is_err());
    }

    #[test]
    fn condition_selectors() {
        assert_eq!(parse_conditions("all").unwrap().len(), 72);
        assert_eq!(parse_conditions("3, 0,5-7,6").unwrap(), vec![0, 3, 5, 6, 7]);
        assert!(parse_conditions("72").is_err());
        assert!(parse_conditions("5-2").is_err());
        assert!(parse_conditions("x").is_err());
        assert!(parse_conditions("").is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(ExitStatus::Success.code(), 0);
        assert_eq!(ExitStatus::from_error(&Error::Config("x".into())).code(), 1);
        assert_eq!(ExitStatus::ConvergenceFailure.code(), 2);
        let e = Error::Pathology {
            condition: "c".into(),
            failures: 20,
        };
        assert_eq!(ExitStatus::from_error(&e).code(), 3);
    }
}
