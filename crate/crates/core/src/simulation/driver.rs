use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{metrics, MetricSummary};
use super::{generate_dataset, replication_rng, GeneratedData, SimulationCondition};
use crate::error::{Error, Result};
use crate::estimation::{detect_improper, fit, fit_nested, Dataset, FitConfig, FitResult, ImproperFlags, ParamLayout};
use crate::model::{Expression, ModelSpec, PopulationParams};

/// Consecutive failed attempts, as a multiple of `S`, after which a
/// condition is abandoned.
const PATHOLOGY_FACTOR: usize = 20;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "JBLCSM_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub name: String,
    pub spec: ModelSpec,
}

impl ModelVariant {
    pub fn new(name: &str, spec: ModelSpec) -> Self {
        Self {
            name: name.to_string(),
            spec,
        }
    }
}

/// Proposed (midpoint) and existing (right endpoint) expressions, each with
/// random and fixed acceleration.
pub fn standard_models() -> Vec<ModelVariant> {
    let endpoint = |s: ModelSpec| s.with_expression(Expression::RightEndpoint);
    vec![
        ModelVariant::new("proposed_full", ModelSpec::full()),
        ModelVariant::new("proposed_reduced", ModelSpec::reduced()),
        ModelVariant::new("existing_full", endpoint(ModelSpec::full())),
        ModelVariant::new("existing_reduced", endpoint(ModelSpec::reduced())),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunOptions {
    /// Convergent replications to retain per model.
    pub replications: usize,
    pub master_seed: u64,
    pub fit: FitConfig,
    /// Worker threads; `None` reads `JBLCSM_THREADS`, then uses all cores.
    pub threads: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            replications: 100,
            master_seed: 20240101,
            fit: FitConfig {
                compute_se: true,
                ..FitConfig::default()
            },
            threads: None,
        }
    }
}

impl RunOptions {
    pub fn resolved_threads(&self) -> usize {
        self.threads
            .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()))
            .filter(|&t| t > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

/// One model's result within a replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutcome {
    pub model: String,
    /// The fit used for metrics; for a full model with an improper solution
    /// this is the substituted reduced fit.
    pub fit: Option<FitResult>,
    /// Flags of the model's own solution, before any substitution.
    pub raw_improper: ImproperFlags,
    pub raw_converged: bool,
    /// Log-likelihood of the model's own solution.
    pub raw_loglik: f64,
    pub substituted: bool,
}

impl ModelOutcome {
    /// Converged, proper (after substitution) and therefore usable.
    pub fn usable(&self) -> bool {
        self.fit.as_ref().is_some_and(|f| f.converged() && !f.improper.any())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub attempt: u64,
    pub truth: PopulationParams,
    pub outcomes: Vec<ModelOutcome>,
    /// Every model produced a usable fit.
    pub retained: bool,
}

/// Improper full-model solutions: negative `psi_gg` and out-of-range factor
/// correlations, displayed as `a//b`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImproperTally {
    pub negative_gamma_variance: usize,
    pub out_of_range_correlation: usize,
}

impl ImproperTally {
    pub fn add(&mut self, flags: &ImproperFlags) {
        self.negative_gamma_variance += usize::from(flags.negative_gamma_variance);
        self.out_of_range_correlation += usize::from(flags.out_of_range_correlation);
    }
}

impl fmt::Display for ImproperTally {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}//{}", self.negative_gamma_variance, self.out_of_range_correlation)
    }
}

impl FromStr for ImproperTally {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed improper tally {s:?}"));
        let (a, b) = s.split_once("//").ok_or_else(bad)?;
        Ok(Self {
            negative_gamma_variance: a.trim().parse().map_err(|_| bad())?,
            out_of_range_correlation: b.trim().parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRun {
    pub condition: SimulationCondition,
    pub models: Vec<ModelVariant>,
    /// All attempts up to and including the last retained one.
    pub records: Vec<ReplicationRecord>,
    pub summaries: Vec<MetricSummary>,
    /// Raw improper counts over retained replications, per model.
    pub tallies: Vec<ImproperTally>,
}

impl ConditionRun {
    pub fn attempts(&self) -> usize {
        self.records.len()
    }

    pub fn retained(&self) -> impl Iterator<Item = &ReplicationRecord> {
        self.records.iter().filter(|r| r.retained)
    }

    pub fn failed_attempts(&self) -> Vec<u64> {
        self.records.iter().filter(|r| !r.retained).map(|r| r.attempt).collect()
    }

    pub fn convergence_rate(&self) -> f64 {
        self.retained().count() as f64 / self.attempts().max(1) as f64
    }

    pub fn summary(&self, model: &str) -> Option<&MetricSummary> {
        self.summaries.iter().find(|s| s.model == model)
    }

    pub fn tally(&self, model: &str) -> Option<ImproperTally> {
        self.models.iter().position(|m| m.name == model).map(|i| self.tallies[i])
    }
}

/// The dataset generated for one attempt.
pub fn replication_data(cond: &SimulationCondition, master_seed: u64, attempt: u64) -> Result<GeneratedData> {
    generate_dataset(cond, &mut replication_rng(master_seed, cond.id, attempt))
}

/// The population values in a model's parameter layout.
pub fn truth_for(cond: &SimulationCondition, spec: &ModelSpec) -> Vec<f64> {
    let truth = cond.truth();
    let truth = if spec.is_reduced() { truth.reduce() } else { truth };
    ParamLayout::new(spec).pack(&truth)
}

/// A reduced fit presented in the full layout with zero gamma variance and
/// covariances (and zero standard errors for them).
fn substitute(full_spec: &ModelSpec, reduced: &FitResult) -> FitResult {
    let estimates = reduced.estimates.expand();
    let se = reduced.se.as_ref().map(|se| {
        let names_r = reduced.layout().names();
        ParamLayout::new(full_spec)
            .names()
            .iter()
            .map(|n| names_r.iter().position(|m| m == n).map_or(0.0, |i| se[i]))
            .collect()
    });
    FitResult {
        spec: *full_spec,
        improper: detect_improper(&estimates),
        estimates,
        se,
        ..reduced.clone()
    }
}

fn run_attempt(cond: &SimulationCondition, models: &[ModelVariant], opts: &RunOptions, attempt: u64) -> Result<ReplicationRecord> {
    let generated = replication_data(cond, opts.master_seed, attempt)?;
    let data = &generated.data;
    let config = FitConfig {
        seed: opts.fit.seed ^ opts.master_seed.rotate_left(17) ^ ((cond.id as u64) << 40 | attempt),
        ..opts.fit
    };

    // reduced fits first: they start the nested full fits and back them up
    let mut reduced_fits: Vec<(ModelSpec, FitResult)> = Vec::new();
    let mut reduced_for = |spec: &ModelSpec, data: &Dataset| -> Result<FitResult> {
        let r_spec = spec.with_acceleration(crate::model::Acceleration::Fixed);
        if let Some((_, f)) = reduced_fits.iter().find(|(s, _)| *s == r_spec) {
            return Ok(f.clone());
        }
        let f = fit(data, &r_spec, &config)?;
        reduced_fits.push((r_spec, f.clone()));
        Ok(f)
    };
    let mut ordered: Vec<usize> = (0..models.len()).collect();
    ordered.sort_by_key(|&i| !models[i].spec.is_reduced());

    let mut outcomes: Vec<Option<ModelOutcome>> = vec![None; models.len()];
    for i in ordered {
        let m = &models[i];
        let reduced = reduced_for(&m.spec, data)?;
        let outcome = if m.spec.is_reduced() {
            ModelOutcome {
                model: m.name.clone(),
                raw_improper: reduced.improper,
                raw_converged: reduced.converged(),
                raw_loglik: reduced.loglik,
                substituted: false,
                fit: Some(reduced),
            }
        } else {
            let full = fit_nested(data, &m.spec, &config, &reduced)?;
            let raw_improper = full.improper;
            let raw_converged = full.converged();
            let raw_loglik = full.loglik;
            let (fit, substituted) = if raw_converged && !raw_improper.any() {
                (Some(full), false)
            } else if reduced.converged() && !reduced.improper.any() {
                (Some(substitute(&m.spec, &reduced)), true)
            } else {
                (Some(full), false)
            };
            ModelOutcome {
                model: m.name.clone(),
                fit,
                raw_improper,
                raw_converged,
                raw_loglik,
                substituted,
            }
        };
        outcomes[i] = Some(outcome);
    }
    let outcomes: Vec<ModelOutcome> = outcomes.into_iter().map(|o| o.expect("every model fitted")).collect();
    let retained = outcomes.iter().all(ModelOutcome::usable);
    Ok(ReplicationRecord {
        attempt,
        truth: cond.truth(),
        outcomes,
        retained,
    })
}

/// Generate and fit fresh datasets until every model has `S` usable fits.
///
/// Attempts run in parallel batches but are scanned in attempt order, so the
/// retained set does not depend on the number of threads.
pub fn run_condition(cond: &SimulationCondition, models: &[ModelVariant], opts: &RunOptions) -> Result<ConditionRun> {
    cond.validate()?;
    if opts.replications == 0 {
        return Err(Error::Config("at least one replication is required".into()));
    }
    if models.is_empty() {
        return Err(Error::Config("no models to fit".into()));
    }
    for m in models {
        m.spec.validate()?;
    }
    let s = opts.replications;
    let threads = opts.resolved_threads();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let mut records = Vec::new();
    let mut kept = 0;
    let mut consecutive_failures = 0;
    let mut next: u64 = 0;
    'outer: while kept < s {
        let batch = (s - kept).max(threads) as u64;
        let attempts: Vec<u64> = (next..next + batch).collect();
        next += batch;
        let results: Vec<Result<ReplicationRecord>> =
            pool.install(|| attempts.par_iter().map(|&a| run_attempt(cond, models, opts, a)).collect());
        for r in results {
            let r = r?;
            if r.retained {
                kept += 1;
                consecutive_failures = 0;
            } else {
                consecutive_failures += 1;
            }
            records.push(r);
            if kept == s {
                break 'outer;
            }
            if consecutive_failures >= PATHOLOGY_FACTOR * s {
                return Err(Error::Pathology {
                    condition: cond.label(),
                    failures: consecutive_failures,
                });
            }
        }
    }

    let mut summaries = Vec::with_capacity(models.len());
    let mut tallies = Vec::with_capacity(models.len());
    for (i, m) in models.iter().enumerate() {
        let names = ParamLayout::new(&m.spec).names();
        let truth = truth_for(cond, &m.spec);
        let mut estimates = Vec::with_capacity(s);
        let mut ses = Vec::with_capacity(s);
        let mut tally = ImproperTally::default();
        for r in records.iter().filter(|r| r.retained) {
            let o = &r.outcomes[i];
            let f = o.fit.as_ref().expect("retained fits exist");
            estimates.push(f.values());
            ses.push(match &f.se {
                Some(se) => se.iter().map(|v| Some(*v)).collect(),
                None => vec![None; names.len()],
            });
            if !m.spec.is_reduced() {
                tally.add(&o.raw_improper);
            }
        }
        summaries.push(metrics(&m.name, &names, &truth, &estimates, &ses, 0.95));
        tallies.push(tally);
    }

    Ok(ConditionRun {
        condition: *cond,
        models: models.to_vec(),
        records,
        summaries,
        tallies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{SlopeDistribution, WaveDesign};

    #[test]
    fn tally_round_trip() {
        let t = ImproperTally {
            negative_gamma_variance: 521,
            out_of_range_correlation: 42,
        };
        assert_eq!(t.to_string(), "521//42");
        assert_eq!("521//42".parse::<ImproperTally>().unwrap(), t);
        assert!("521/42".parse::<ImproperTally>().is_err());
        assert!("a//1".parse::<ImproperTally>().is_err());
    }

    #[test]
    fn substitution_zeroes_gamma_block() {
        let cond = SimulationCondition::new(WaveDesign::TenEqual, 200, SlopeDistribution::Steep, 0.1, 1.0);
        let reduced_est = cond.truth().reduce();
        let reduced = FitResult {
            spec: ModelSpec::reduced(),
            improper: detect_improper(&reduced_est),
            estimates: reduced_est,
            se: Some((1..=11).map(f64::from).collect()),
            loglik: -10.0,
            indices: crate::estimation::fit_indices(-10.0, 11, 200),
            n_params: 11,
            n_obs: 200,
            status: crate::estimation::FitStatus::Converged,
            attempts: 1,
            iterations: 3,
        };
        let s = substitute(&ModelSpec::full(), &reduced);
        let names = s.parameter_names();
        let values = s.values();
        let se = s.se.clone().unwrap();
        for (i, n) in names.iter().enumerate() {
            if n.ends_with('g') && n.starts_with("psi") {
                assert_eq!((values[i], se[i]), (0.0, 0.0), "{n}");
            }
        }
        assert_eq!(values[3], -0.7);
        assert_eq!(se[14], 11.0);
        assert!(!s.improper.any());
    }

    #[test]
    fn threads_option_wins() {
        let o = RunOptions {
            threads: Some(3),
            ..RunOptions::default()
        };
        assert_eq!(o.resolved_threads(), 3);
    }
}
