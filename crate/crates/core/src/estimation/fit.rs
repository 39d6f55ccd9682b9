use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::likelihood::loglik_gradient;
use super::optimizer::{hessian_from_gradient, minimize, BfgsOptions};
use super::params::ParamLayout;
use super::Dataset;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, PopulationParams};

/// Relative finite-difference step for numerical Hessians.
const HESSIAN_STEP: f64 = 1e-4;
/// Tolerance used when comparing nested log-likelihoods.
pub const NESTING_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Optimisation runs from different starts before giving up.
    pub max_restarts: usize,
    pub gradient_tolerance: f64,
    pub relative_tolerance: f64,
    /// Half-width of the multiplicative `U(1 - jitter, 1 + jitter)` start perturbation.
    pub jitter: f64,
    pub max_iterations: usize,
    pub seed: u64,
    pub compute_se: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_restarts: 10,
            gradient_tolerance: 1e-6,
            relative_tolerance: 1e-10,
            jitter: 0.2,
            max_iterations: 500,
            seed: 0,
            compute_se: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    FailedAfterRestarts,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImproperFlags {
    /// Any growth-factor variance below zero.
    pub negative_factor_variance: bool,
    /// The variance of the log acceleration ratio specifically.
    pub negative_gamma_variance: bool,
    /// Any factor correlation outside `[-1, 1]`.
    pub out_of_range_correlation: bool,
    /// Out-of-range correlation involving the log acceleration ratio.
    pub out_of_range_gamma_correlation: bool,
}

impl ImproperFlags {
    pub fn any(&self) -> bool {
        self.negative_factor_variance || self.out_of_range_correlation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitIndices {
    pub minus2ll: f64,
    pub aic: f64,
    pub bic: f64,
}

pub fn fit_indices(loglik: f64, n_params: usize, n: usize) -> FitIndices {
    let minus2ll = -2.0 * loglik;
    let k = n_params as f64;
    FitIndices {
        minus2ll,
        aic: minus2ll + 2.0 * k,
        bic: minus2ll + (n as f64).ln() * k,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub estimates: PopulationParams,
    /// Standard errors in [`ParamLayout`] order; `None` when the observed
    /// information could not be inverted.
    pub se: Option<Vec<f64>>,
    pub loglik: f64,
    pub indices: FitIndices,
    pub n_params: usize,
    pub n_obs: usize,
    pub status: FitStatus,
    pub improper: ImproperFlags,
    /// Optimisation runs used, including the successful one.
    pub attempts: usize,
    pub iterations: usize,
}

impl FitResult {
    pub fn converged(&self) -> bool {
        self.status == FitStatus::Converged
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(&self.spec)
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.layout().names()
    }

    pub fn values(&self) -> Vec<f64> {
        self.layout().pack(&self.estimates)
    }
}

/// Wald interval `estimate +/- z se` at the given two-sided level.
pub fn wald_ci(estimate: f64, se: f64, level: f64) -> (f64, f64) {
    let z = standard_normal().inverse_cdf(0.5 * (1.0 + level));
    (estimate - z * se, estimate + z * se)
}

/// Two-sided Wald p-value for `H0: parameter = 0`.
pub fn wald_p_value(estimate: f64, se: f64) -> f64 {
    if se <= 0.0 {
        return if estimate == 0.0 { 1.0 } else { 0.0 };
    }
    let z = (estimate / se).abs();
    2.0 * standard_normal().sf(z)
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// Negative factor variances and correlations beyond `[-1, 1]`. Correlations
/// are only formed for pairs whose variances are both positive.
pub fn detect_improper(params: &PopulationParams) -> ImproperFlags {
    let k = params.n_factors();
    let cov = &params.covariance;
    let mut flags = ImproperFlags::default();
    for r in 0..k {
        if cov[(r, r)] < 0.0 {
            flags.negative_factor_variance = true;
            if r == 3 {
                flags.negative_gamma_variance = true;
            }
        }
    }
    for r in 0..k {
        for c in r + 1..k {
            let (vr, vc) = (cov[(r, r)], cov[(c, c)]);
            if vr > 0.0 && vc > 0.0 && cov[(r, c)].abs() > (vr * vc).sqrt() {
                flags.out_of_range_correlation = true;
                if c == 3 {
                    flags.out_of_range_gamma_correlation = true;
                }
            }
        }
    }
    flags
}

/// Optimiser coordinates: the packed parameters with the residual variance
/// on the log scale.
struct Objective<'a> {
    data: &'a Dataset,
    spec: ModelSpec,
    layout: ParamLayout,
}

impl Objective<'_> {
    fn to_params(&self, x: &DVector<f64>) -> Option<PopulationParams> {
        let mut v: Vec<f64> = x.iter().copied().collect();
        let r = self.layout.residual_index();
        v[r] = v[r].exp();
        (v[r] > 0.0 && v[r].is_finite()).then(|| self.layout.unpack(&v))
    }

    fn to_coords(&self, p: &PopulationParams) -> DVector<f64> {
        let mut v = self.layout.pack(p);
        let r = self.layout.residual_index();
        v[r] = v[r].ln();
        DVector::from_vec(v)
    }

    /// Negative mean log-likelihood and its gradient.
    fn eval(&self, x: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let p = self.to_params(x)?;
        let (ll, g) = loglik_gradient(&p, self.data, &self.spec).ok()?;
        if !ll.is_finite() {
            return None;
        }
        let n = self.data.len() as f64;
        let mut g = DVector::from_vec(g) * (-1.0 / n);
        let r = self.layout.residual_index();
        g[r] *= p.residual_variance;
        Some((-ll / n, g))
    }

    fn initial_inverse_hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let h = hessian_from_gradient(|z| self.eval(z).map(|(_, g)| g), x, HESSIAN_STEP)?;
        if let Some(ch) = h.clone().cholesky() {
            return Some(ch.inverse());
        }
        let scale = h.diagonal().map(|d| 1.0 / d.abs().max(1e-8));
        Some(DMatrix::from_diagonal(&scale))
    }
}

/// Heuristic starting values from the raw data.
pub fn default_start(data: &Dataset, spec: &ModelSpec) -> PopulationParams {
    let j = data.n_waves();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0).max(1.0)
    };
    let first: Vec<f64> = data.individuals().iter().map(|i| i.y[0]).collect();
    let slopes: Vec<f64> = data
        .individuals()
        .iter()
        .map(|i| {
            let t = i.schedule.times();
            (i.y[j - 1] - i.y[j - 2]) / (t[j - 1] - t[j - 2])
        })
        .collect();
    // distance between the first score and the back-extrapolated asymptote
    let distances: Vec<f64> = data
        .individuals()
        .iter()
        .zip(&slopes)
        .map(|(i, s)| {
            let t = i.schedule.times();
            i.y[0] - (i.y[j - 1] - s * (t[j - 1] - t[0]))
        })
        .collect();

    let mu0 = mean(&first);
    let mu1 = mean(&slopes);
    let mut mu2 = mean(&distances);
    if !mu2.is_finite() || mu2 == 0.0 {
        let (lo, hi) = data
            .individuals()
            .iter()
            .flat_map(|i| i.y.iter().copied())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        mu2 = -0.5 * (hi - lo);
    }
    let floor = |v: f64| if v.is_finite() && v > 1e-3 { v } else { 1e-3 };
    let v0 = var(&first);
    let mut cov = nalgebra::Matrix4::zeros();
    cov[(0, 0)] = floor(0.5 * v0);
    cov[(1, 1)] = floor(0.5 * var(&slopes));
    cov[(2, 2)] = floor(0.5 * var(&distances));
    if !spec.is_reduced() {
        cov[(3, 3)] = 0.005;
    }
    PopulationParams {
        mean: nalgebra::Vector4::new(mu0, mu1, mu2, -0.7),
        covariance: cov,
        residual_variance: floor(0.1 * v0),
        reduced: spec.is_reduced(),
    }
}

fn jittered(start: &PopulationParams, layout: &ParamLayout, jitter: f64, rng: &mut ChaCha8Rng) -> PopulationParams {
    let v: Vec<f64> = layout
        .pack(start)
        .into_iter()
        .map(|x| x * rng.random_range(1.0 - jitter..=1.0 + jitter))
        .collect();
    layout.unpack(&v)
}

fn check_inputs(data: &Dataset, spec: &ModelSpec) -> Result<()> {
    spec.validate()?;
    if data.n_waves() < 3 {
        return Err(Error::InvalidData(format!(
            "at least 3 waves are required for fitting, got {}",
            data.n_waves()
        )));
    }
    if data.len() < spec.n_params() {
        return Err(Error::InvalidData(format!(
            "{} individuals cannot identify {} free parameters",
            data.len(),
            spec.n_params()
        )));
    }
    Ok(())
}

/// Fit from the heuristic default start, restarting from jittered starts.
pub fn fit(data: &Dataset, spec: &ModelSpec, config: &FitConfig) -> Result<FitResult> {
    check_inputs(data, spec)?;
    fit_with_start(data, spec, config, &default_start(data, spec))
}

/// Fit from a given start; restarts jitter that start multiplicatively.
pub fn fit_with_start(data: &Dataset, spec: &ModelSpec, config: &FitConfig, start: &PopulationParams) -> Result<FitResult> {
    check_inputs(data, spec)?;
    if start.reduced != spec.is_reduced() {
        return Err(Error::DimensionMismatch("start values do not match the model".into()));
    }
    let layout = ParamLayout::new(spec);
    let objective = Objective {
        data,
        spec: *spec,
        layout,
    };
    let opts = BfgsOptions {
        max_iterations: config.max_iterations,
        gradient_tolerance: config.gradient_tolerance,
        relative_tolerance: config.relative_tolerance,
        ..BfgsOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(PopulationParams, f64, bool, usize)> = None;
    let mut attempts = 0;
    let mut iterations = 0;

    for attempt in 0..config.max_restarts.max(1) {
        attempts += 1;
        let from = if attempt == 0 {
            start.clone()
        } else {
            jittered(start, &layout, config.jitter, &mut rng)
        };
        let x0 = objective.to_coords(&from);
        let h0 = objective.initial_inverse_hessian(&x0);
        let m = minimize(|x| objective.eval(x), x0, h0, &opts);
        iterations += m.iterations;
        let converged = m.termination.converged();
        if let Some(p) = objective.to_params(&m.x) {
            let ll = -m.value * data.len() as f64;
            let better = match &best {
                None => true,
                Some((_, best_ll, best_conv, _)) => (converged && !best_conv) || (converged == *best_conv && ll > *best_ll),
            };
            if ll.is_finite() && better {
                best = Some((p, ll, converged, attempt));
            }
        }
        if converged {
            break;
        }
    }

    let (estimates, loglik, converged) = match best {
        Some((p, ll, c, _)) => (p, ll, c),
        None => (start.clone(), f64::NEG_INFINITY, false),
    };
    let n_params = spec.n_params();
    let mut result = FitResult {
        spec: *spec,
        improper: detect_improper(&estimates),
        se: None,
        loglik,
        indices: fit_indices(loglik, n_params, data.len()),
        n_params,
        n_obs: data.len(),
        status: if converged {
            FitStatus::Converged
        } else {
            FitStatus::FailedAfterRestarts
        },
        estimates,
        attempts,
        iterations,
    };
    if converged && config.compute_se {
        result.se = standard_errors(&result, data, spec);
    }
    Ok(result)
}

/// Fit a full model so that its log-likelihood is never below that of the
/// nested reduced fit: if the default start lands lower, the full model is
/// refit from the reduced estimates with zero gamma (co)variances.
pub fn fit_nested(data: &Dataset, spec: &ModelSpec, config: &FitConfig, reduced: &FitResult) -> Result<FitResult> {
    let first = fit(data, spec, config)?;
    if spec.is_reduced() || !reduced.converged() {
        return Ok(first);
    }
    if first.converged() && first.loglik >= reduced.loglik - NESTING_TOLERANCE {
        return Ok(first);
    }
    let second = fit_with_start(data, spec, config, &reduced.estimates.expand())?;
    let attempts = first.attempts + second.attempts;
    let iterations = first.iterations + second.iterations;
    let mut chosen = match (first.converged(), second.converged()) {
        (true, false) => first,
        (false, true) => second,
        _ if second.loglik >= first.loglik => second,
        _ => first,
    };
    chosen.attempts = attempts;
    chosen.iterations = iterations;
    Ok(chosen)
}

/// Square roots of the diagonal of the inverse observed information, from a
/// central-difference Hessian of the analytic gradient.
pub fn standard_errors(result: &FitResult, data: &Dataset, spec: &ModelSpec) -> Option<Vec<f64>> {
    let layout = ParamLayout::new(spec);
    let x = DVector::from_vec(layout.pack(&result.estimates));
    let neg_gradient = |z: &DVector<f64>| {
        let v: Vec<f64> = z.iter().copied().collect();
        let p = layout.unpack(&v);
        if !(p.residual_variance > 0.0) {
            return None;
        }
        loglik_gradient(&p, data, spec)
            .ok()
            .map(|(_, g)| -DVector::from_vec(g))
    };
    let h = hessian_from_gradient(neg_gradient, &x, HESSIAN_STEP)?;
    se_from_information(&h)
}

/// Standard errors from an observed information matrix; `None` unless it is
/// positive definite.
pub fn se_from_information(information: &DMatrix<f64>) -> Option<Vec<f64>> {
    let inv = information.clone().cholesky()?.inverse();
    let se: Vec<f64> = inv.diagonal().iter().map(|v| v.sqrt()).collect();
    se.iter().all(|s| s.is_finite() && *s > 0.0).then_some(se)
}
