//! Jenss-Bayley curve, individual loading matrices and model-implied moments.
//!
//! Every model variant is described by a [`ModelSpec`]. The latent change
//! score framework builds loadings from interval rates: the rate of each
//! interval is linearised around the population mean of the log acceleration
//! ratio, and the interval matrix accumulates rate loadings into levels.
//!
//! The fourth growth factor enters the structural model as the deviation
//! `delta = gamma - mu_gamma`, which has mean zero. The population mean
//! `mu_gamma` only acts through the loadings, so model-implied means use
//! [`PopulationParams::structural_mean`] rather than the raw mean vector.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `|gamma * t|` accepted before a curve is declared divergent.
pub const EXPONENT_GUARD: f64 = 700.0;

fn guarded_exp(gamma: f64, t: f64) -> Result<f64> {
    let x = gamma * t;
    if !x.is_finite() || x.abs() > EXPONENT_GUARD {
        return Err(Error::DivergentCurve(x.abs()));
    }
    Ok(x.exp())
}

/// One individual's growth factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthFactors {
    /// Initial status.
    pub eta0: f64,
    /// Slope of the linear asymptote.
    pub eta1: f64,
    /// Vertical distance between the initial status and the asymptote intercept.
    pub eta2: f64,
    /// Log ratio of growth acceleration.
    pub gamma: f64,
}

impl GrowthFactors {
    pub fn new(eta0: f64, eta1: f64, eta2: f64, gamma: f64) -> Result<Self> {
        let f = Self {
            eta0,
            eta1,
            eta2,
            gamma,
        };
        if !f.as_array().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite growth factors {f:?}")));
        }
        Ok(f)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.eta0, self.eta1, self.eta2, self.gamma]
    }

    /// A curve only approaches its linear asymptote when `gamma < 0`.
    pub fn approaches_asymptote(&self) -> bool {
        self.gamma < 0.0
    }
}

/// Level of the Jenss-Bayley curve, `eta0 + eta1 t + eta2 (exp(gamma t) - 1)`.
pub fn jb_value(f: &GrowthFactors, t: f64) -> Result<f64> {
    let e = guarded_exp(f.gamma, t)?;
    Ok(f.eta0 + f.eta1 * t + f.eta2 * (e - 1.0))
}

/// Instantaneous growth rate, the time derivative of [`jb_value`].
pub fn jb_rate(f: &GrowthFactors, t: f64) -> Result<f64> {
    let e = guarded_exp(f.gamma, t)?;
    Ok(f.eta1 + f.eta2 * f.gamma * e)
}

/// Ordered measurement occasions of one individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Schedule {
    times: Vec<f64>,
}

impl Schedule {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidSchedule("no measurement occasions".into()));
        }
        if let Some(t) = times.iter().find(|t| !t.is_finite()) {
            return Err(Error::InvalidSchedule(format!("non-finite time {t}")));
        }
        if let Some(k) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSchedule(format!(
                "times not strictly increasing at occasion {} ({} after {})",
                k + 2,
                times[k + 1],
                times[k]
            )));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn intervals(&self) -> impl Iterator<Item = f64> + '_ {
        self.times.windows(2).map(|w| w[1] - w[0])
    }
}

impl TryFrom<Vec<f64>> for Schedule {
    type Error = Error;

    fn try_from(times: Vec<f64>) -> Result<Self> {
        Self::new(times)
    }
}

impl From<Schedule> for Vec<f64> {
    fn from(s: Schedule) -> Self {
        s.times
    }
}

/// Which time inside an interval supplies the rate of that interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expression {
    /// Rate at the midpoint of the interval.
    Midpoint,
    /// Rate at the end of the interval (the older change-score expression).
    RightEndpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acceleration {
    /// The log acceleration ratio varies between individuals.
    Random,
    /// Only a fixed effect for the log acceleration ratio (reduced model).
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Framework {
    /// Latent change score model.
    Lcsm,
    /// Latent growth curve model.
    Lgc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub expression: Expression,
    pub acceleration: Acceleration,
    pub framework: Framework,
}

impl ModelSpec {
    pub const fn new(expression: Expression, acceleration: Acceleration, framework: Framework) -> Self {
        Self {
            expression,
            acceleration,
            framework,
        }
    }

    /// Midpoint change scores with a random log acceleration ratio.
    pub const fn full() -> Self {
        Self::new(Expression::Midpoint, Acceleration::Random, Framework::Lcsm)
    }

    pub const fn reduced() -> Self {
        Self::new(Expression::Midpoint, Acceleration::Fixed, Framework::Lcsm)
    }

    pub const fn with_expression(mut self, expression: Expression) -> Self {
        self.expression = expression;
        self
    }

    pub const fn with_acceleration(mut self, acceleration: Acceleration) -> Self {
        self.acceleration = acceleration;
        self
    }

    pub const fn with_framework(mut self, framework: Framework) -> Self {
        self.framework = framework;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.expression == Expression::RightEndpoint && self.framework != Framework::Lcsm {
            return Err(Error::InvalidSpec(
                "the right-endpoint expression only applies to latent change score models".into(),
            ));
        }
        Ok(())
    }

    pub fn is_reduced(&self) -> bool {
        self.acceleration == Acceleration::Fixed
    }

    /// Number of growth factors carried by the loading matrix.
    pub fn n_factors(&self) -> usize {
        if self.is_reduced() {
            3
        } else {
            4
        }
    }

    /// Free parameters: means, lower triangle of the factor covariance and
    /// the residual variance. `mu_gamma` stays free in the reduced model.
    pub fn n_params(&self) -> usize {
        let k = self.n_factors();
        4 + k * (k + 1) / 2 + 1
    }

    pub fn label(&self) -> String {
        format!(
            "{}_{}_{}",
            match self.framework {
                Framework::Lcsm => "lcsm",
                Framework::Lgc => "lgc",
            },
            match self.expression {
                Expression::Midpoint => "midpoint",
                Expression::RightEndpoint => "endpoint",
            },
            if self.is_reduced() { "reduced" } else { "full" }
        )
    }
}

/// Population means, factor covariance and residual variance.
///
/// The covariance is always stored as 4x4. For reduced models the last row
/// and column are identically zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationParams {
    pub mean: Vector4<f64>,
    pub covariance: Matrix4<f64>,
    pub residual_variance: f64,
    pub reduced: bool,
}

impl PopulationParams {
    pub fn new(mean: Vector4<f64>, covariance: Matrix4<f64>, residual_variance: f64, reduced: bool) -> Result<Self> {
        let p = Self {
            mean,
            covariance,
            residual_variance,
            reduced,
        };
        p.validate()?;
        Ok(p)
    }

    /// Means plus a covariance built from standard deviations and one common
    /// correlation among all factor pairs with positive variance.
    pub fn from_correlation(mean: [f64; 4], sds: [f64; 4], rho: f64, residual_variance: f64) -> Result<Self> {
        let mut cov = Matrix4::zeros();
        for r in 0..4 {
            for c in 0..4 {
                cov[(r, c)] = if r == c { sds[r] * sds[r] } else { rho * sds[r] * sds[c] };
            }
        }
        Self::new(Vector4::from(mean), cov, residual_variance, false)
    }

    /// Drop the random part of the log acceleration ratio.
    pub fn reduce(&self) -> Self {
        let mut p = self.clone();
        for k in 0..4 {
            p.covariance[(3, k)] = 0.0;
            p.covariance[(k, 3)] = 0.0;
        }
        p.reduced = true;
        p
    }

    /// Embed reduced parameters in the full model with zero gamma (co)variances.
    pub fn expand(&self) -> Self {
        let mut p = self.reduce();
        p.reduced = false;
        p
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.residual_variance > 0.0 && self.residual_variance.is_finite()) {
            return Err(Error::InvalidData(format!(
                "residual variance must be positive, got {}",
                self.residual_variance
            )));
        }
        if !self.mean.iter().chain(self.covariance.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidData("non-finite population parameters".into()));
        }
        let asym = (self.covariance - self.covariance.transpose()).abs().max();
        if asym > 1e-12 * (1.0 + self.covariance.abs().max()) {
            return Err(Error::InvalidData("factor covariance is not symmetric".into()));
        }
        if self.reduced && (0..4).any(|k| self.covariance[(3, k)] != 0.0) {
            return Err(Error::InvalidData(
                "reduced parameters must have a zero gamma row in the factor covariance".into(),
            ));
        }
        Ok(())
    }

    pub fn n_factors(&self) -> usize {
        if self.reduced {
            3
        } else {
            4
        }
    }

    pub fn mu_gamma(&self) -> f64 {
        self.mean[3]
    }

    pub fn mu_eta2(&self) -> f64 {
        self.mean[2]
    }

    /// Active block of the factor covariance (3x3 when reduced).
    pub fn active_covariance(&self) -> DMatrix<f64> {
        let k = self.n_factors();
        self.covariance.view((0, 0), (k, k)).into_owned()
    }

    /// Means of the factors as they enter the loading matrix: the gamma slot
    /// holds the deviation from `mu_gamma`, whose mean is zero.
    pub fn structural_mean(&self) -> DVector<f64> {
        let mut m = DVector::from_column_slice(&self.mean.as_slice()[..self.n_factors()]);
        if !self.reduced {
            m[3] = 0.0;
        }
        m
    }

    /// Means of the rate-related factors `(eta1, eta2, delta)`.
    pub fn rate_mean(&self) -> DVector<f64> {
        self.structural_mean().rows(1, self.n_factors() - 1).into_owned()
    }

    /// Covariance block of the rate-related factors.
    pub fn rate_covariance(&self) -> DMatrix<f64> {
        let k = self.n_factors();
        self.covariance.view((1, 1), (k - 1, k - 1)).into_owned()
    }

    fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        spec.validate()?;
        if self.reduced != spec.is_reduced() {
            return Err(Error::DimensionMismatch(format!(
                "parameters carry {} factors but the model expects {}",
                self.n_factors(),
                spec.n_factors()
            )));
        }
        Ok(())
    }
}

/// Times at which interval rates are evaluated.
pub fn evaluation_times(schedule: &Schedule, expression: Expression) -> Vec<f64> {
    match expression {
        Expression::Midpoint => midpoints(schedule),
        Expression::RightEndpoint => schedule.times()[1..].to_vec(),
    }
}

pub fn midpoints(schedule: &Schedule) -> Vec<f64> {
    schedule.times().windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

fn rate_loading_row(t: f64, mu_gamma: f64, mu_eta2: f64) -> Result<[f64; 3]> {
    let e = guarded_exp(mu_gamma, t)?;
    Ok([1.0, mu_gamma * e, mu_eta2 * e * (1.0 + mu_gamma * t)])
}

/// Rate loadings, one row per interval.
///
/// Columns load on `(eta1, eta2, delta)`; the reduced model drops `delta`.
pub fn rate_loadings(schedule: &Schedule, mu_gamma: f64, mu_eta2: f64, spec: &ModelSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let times = evaluation_times(schedule, spec.expression);
    rate_loadings_at(&times, mu_gamma, mu_eta2, spec.n_factors() - 1)
}

/// Rate loadings at arbitrary times, with `cols` columns (2 or 3).
pub fn rate_loadings_at(times: &[f64], mu_gamma: f64, mu_eta2: f64, cols: usize) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(times.len(), cols);
    for (r, &t) in times.iter().enumerate() {
        let row = rate_loading_row(t, mu_gamma, mu_eta2)?;
        for c in 0..cols {
            m[(r, c)] = row[c];
        }
    }
    Ok(m)
}

/// Lower staircase of interval lengths: entry `(j, k)` is `t[k+1] - t[k]`
/// when `k < j`, zero otherwise.
pub fn interval_matrix(schedule: &Schedule) -> DMatrix<f64> {
    let times = schedule.times();
    let j = times.len();
    let mut omega = DMatrix::zeros(j, j.saturating_sub(1));
    for r in 1..j {
        for k in 0..r {
            omega[(r, k)] = times[k + 1] - times[k];
        }
    }
    omega
}

/// Individual loading matrices for the latent change score framework.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingBundle {
    pub rate_loadings: DMatrix<f64>,
    pub interval_matrix: DMatrix<f64>,
    pub growth_loadings: DMatrix<f64>,
}

impl LoadingBundle {
    pub fn new(schedule: &Schedule, params: &PopulationParams, spec: &ModelSpec) -> Result<Self> {
        params.check_spec(spec)?;
        let rate = rate_loadings(schedule, params.mu_gamma(), params.mu_eta2(), spec)?;
        let omega = interval_matrix(schedule);
        let growth = stack_intercept(&(&omega * &rate));
        Ok(Self {
            rate_loadings: rate,
            interval_matrix: omega,
            growth_loadings: growth,
        })
    }
}

fn stack_intercept(accumulated: &DMatrix<f64>) -> DMatrix<f64> {
    let j = accumulated.nrows();
    let mut g = DMatrix::zeros(j, accumulated.ncols() + 1);
    g.column_mut(0).fill(1.0);
    g.view_mut((0, 1), (j, accumulated.ncols())).copy_from(accumulated);
    g
}

/// Growth-factor loadings (`J x 4`, or `J x 3` when reduced).
pub fn growth_loadings(schedule: &Schedule, params: &PopulationParams, spec: &ModelSpec) -> Result<DMatrix<f64>> {
    params.check_spec(spec)?;
    match spec.framework {
        Framework::Lcsm => Ok(LoadingBundle::new(schedule, params, spec)?.growth_loadings),
        Framework::Lgc => lgc_loadings(schedule, params.mu_gamma(), params.mu_eta2(), spec.n_factors()),
    }
}

fn lgc_loadings(schedule: &Schedule, mu_gamma: f64, mu_eta2: f64, k: usize) -> Result<DMatrix<f64>> {
    let times = schedule.times();
    let mut g = DMatrix::zeros(times.len(), k);
    for (r, &t) in times.iter().enumerate() {
        let e = guarded_exp(mu_gamma, t)?;
        let row = [1.0, t, e - 1.0, mu_eta2 * t * e];
        for c in 0..k {
            g[(r, c)] = row[c];
        }
    }
    Ok(g)
}

/// Growth loadings together with their partial derivatives with respect to
/// `mu_gamma` and `mu_eta2`, the two population means the loadings depend on.
#[derive(Debug, Clone)]
pub struct LoadingDerivatives {
    pub loadings: DMatrix<f64>,
    pub d_mu_gamma: DMatrix<f64>,
    pub d_mu_eta2: DMatrix<f64>,
}

pub fn growth_loading_derivatives(
    schedule: &Schedule,
    mu_gamma: f64,
    mu_eta2: f64,
    spec: &ModelSpec,
) -> Result<LoadingDerivatives> {
    spec.validate()?;
    let k = spec.n_factors();
    match spec.framework {
        Framework::Lcsm => {
            let times = evaluation_times(schedule, spec.expression);
            let omega = interval_matrix(schedule);
            let m = times.len();
            let mut rate = DMatrix::zeros(m, k - 1);
            let mut rate_dg = DMatrix::zeros(m, k - 1);
            let mut rate_d2 = DMatrix::zeros(m, k - 1);
            for (r, &t) in times.iter().enumerate() {
                let e = guarded_exp(mu_gamma, t)?;
                let vals = [1.0, mu_gamma * e, mu_eta2 * e * (1.0 + mu_gamma * t)];
                let dg = [0.0, e * (1.0 + mu_gamma * t), mu_eta2 * t * e * (2.0 + mu_gamma * t)];
                let d2 = [0.0, 0.0, e * (1.0 + mu_gamma * t)];
                for c in 0..k - 1 {
                    rate[(r, c)] = vals[c];
                    rate_dg[(r, c)] = dg[c];
                    rate_d2[(r, c)] = d2[c];
                }
            }
            let loadings = stack_intercept(&(&omega * &rate));
            let mut d_mu_gamma = stack_intercept(&(&omega * &rate_dg));
            d_mu_gamma.column_mut(0).fill(0.0);
            let mut d_mu_eta2 = stack_intercept(&(&omega * &rate_d2));
            d_mu_eta2.column_mut(0).fill(0.0);
            Ok(LoadingDerivatives {
                loadings,
                d_mu_gamma,
                d_mu_eta2,
            })
        }
        Framework::Lgc => {
            let times = schedule.times();
            let j = times.len();
            let mut loadings = DMatrix::zeros(j, k);
            let mut d_mu_gamma = DMatrix::zeros(j, k);
            let mut d_mu_eta2 = DMatrix::zeros(j, k);
            for (r, &t) in times.iter().enumerate() {
                let e = guarded_exp(mu_gamma, t)?;
                let vals = [1.0, t, e - 1.0, mu_eta2 * t * e];
                let dg = [0.0, 0.0, t * e, mu_eta2 * t * t * e];
                let d2 = [0.0, 0.0, 0.0, t * e];
                for c in 0..k {
                    loadings[(r, c)] = vals[c];
                    d_mu_gamma[(r, c)] = dg[c];
                    d_mu_eta2[(r, c)] = d2[c];
                }
            }
            Ok(LoadingDerivatives {
                loadings,
                d_mu_gamma,
                d_mu_eta2,
            })
        }
    }
}

/// Model-implied mean and covariance of one individual's outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpliedMoments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

pub fn implied_moments(schedule: &Schedule, params: &PopulationParams, spec: &ModelSpec) -> Result<ImpliedMoments> {
    let lg = growth_loadings(schedule, params, spec)?;
    Ok(moments_from_loadings(&lg, params))
}

pub(crate) fn moments_from_loadings(lg: &DMatrix<f64>, params: &PopulationParams) -> ImpliedMoments {
    let psi = params.active_covariance();
    let mean = lg * params.structural_mean();
    let mut covariance = lg * psi * lg.transpose();
    for d in 0..covariance.nrows() {
        covariance[(d, d)] += params.residual_variance;
    }
    // exact symmetry for downstream factorisations
    let covariance = (&covariance + covariance.transpose()) * 0.5;
    ImpliedMoments { mean, covariance }
}
