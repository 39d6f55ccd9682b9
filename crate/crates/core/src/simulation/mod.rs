//! Monte Carlo evaluation of the model family.
//!
//! Data are generated from the exact Jenss-Bayley growth curve with
//! individually jittered occasions, then fitted with the change score
//! models. The mismatch between the generating curve and the fitted
//! rectangle approximation is intended.

mod driver;
mod metrics;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{Dataset, Individual};
use crate::model::{jb_value, GrowthFactors, PopulationParams, Schedule};

pub use driver::{
    replication_data, run_condition, standard_models, truth_for, ConditionRun, ImproperTally, ModelOutcome,
    ModelVariant, ReplicationRecord, RunOptions, THREADS_ENV,
};
pub use metrics::{metrics, MetricScale, MetricSummary, ParameterMetrics};

pub const MU_ETA0: f64 = 50.0;
pub const PSI_00: f64 = 16.0;
pub const MU_ETA2: f64 = -30.0;
pub const PSI_22: f64 = 36.0;
pub const MU_GAMMA: f64 = -0.7;
pub const RHO: f64 = 0.3;
pub const WINDOW: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveDesign {
    SevenEqual,
    TenEqual,
    TenUnequal,
}

impl WaveDesign {
    pub const ALL: [WaveDesign; 3] = [WaveDesign::TenEqual, WaveDesign::TenUnequal, WaveDesign::SevenEqual];

    pub fn times(self) -> &'static [f64] {
        match self {
            WaveDesign::SevenEqual => &[0.0, 1.5, 3.0, 4.5, 6.0, 7.5, 9.0],
            WaveDesign::TenEqual => &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
            WaveDesign::TenUnequal => &[0.0, 0.75, 1.5, 2.25, 3.0, 3.75, 4.5, 6.0, 7.5, 9.0],
        }
    }

    fn tag(self) -> &'static str {
        match self {
            WaveDesign::SevenEqual => "w7eq",
            WaveDesign::TenEqual => "w10eq",
            WaveDesign::TenUnequal => "w10uneq",
        }
    }
}

/// Distribution of the asymptote slope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeDistribution {
    /// `N(2.5, 1.0^2)`
    Steep,
    /// `N(1.0, 0.4^2)`
    Shallow,
}

impl SlopeDistribution {
    pub fn mean(self) -> f64 {
        match self {
            SlopeDistribution::Steep => 2.5,
            SlopeDistribution::Shallow => 1.0,
        }
    }

    pub fn sd(self) -> f64 {
        match self {
            SlopeDistribution::Steep => 1.0,
            SlopeDistribution::Shallow => 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationCondition {
    /// Position in [`condition_grid`].
    pub id: usize,
    pub waves: WaveDesign,
    /// Half-width of the window around each wave.
    pub window: f64,
    /// Also jitter the first wave. Off by default: the change score models
    /// define the initial status at each individual's first occasion, so a
    /// jittered origin adds `rate(0)^2 window^2 / 3` to its variance.
    #[serde(default)]
    pub jitter_first_wave: bool,
    pub n: usize,
    pub slope: SlopeDistribution,
    pub sd_gamma: f64,
    pub theta_eps: f64,
}

impl SimulationCondition {
    pub fn new(waves: WaveDesign, n: usize, slope: SlopeDistribution, sd_gamma: f64, theta_eps: f64) -> Self {
        Self {
            id: 0,
            waves,
            window: WINDOW,
            jitter_first_wave: false,
            n,
            slope,
            sd_gamma,
            theta_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.waves.times();
        let min_gap = t.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        if !(self.window >= 0.0 && self.window < 0.5 * min_gap) {
            return Err(Error::Config(format!(
                "occasion window {} overlaps neighbouring waves (minimum gap {min_gap})",
                self.window
            )));
        }
        if self.n == 0 || !(self.theta_eps > 0.0) || !(self.sd_gamma >= 0.0) {
            return Err(Error::Config(format!("invalid simulation condition {self:?}")));
        }
        Ok(())
    }

    /// Generating population values, in the full-model layout.
    pub fn truth(&self) -> PopulationParams {
        PopulationParams::from_correlation(
            [MU_ETA0, self.slope.mean(), MU_ETA2, MU_GAMMA],
            [PSI_00.sqrt(), self.slope.sd(), PSI_22.sqrt(), self.sd_gamma],
            RHO,
            self.theta_eps,
        )
        .expect("design values are valid")
    }

    pub fn label(&self) -> String {
        format!(
            "c{:02}_{}_n{}_{}_sdg{:03}_th{}",
            self.id,
            self.waves.tag(),
            self.n,
            match self.slope {
                SlopeDistribution::Steep => "steep",
                SlopeDistribution::Shallow => "shallow",
            },
            (self.sd_gamma * 100.0).round() as i64,
            self.theta_eps
        )
    }
}

/// The full factorial design: waves x sample size x slope x sd(gamma) x
/// residual variance.
pub fn condition_grid() -> Vec<SimulationCondition> {
    let mut grid = Vec::with_capacity(72);
    for waves in WaveDesign::ALL {
        for n in [200, 500] {
            for slope in [SlopeDistribution::Steep, SlopeDistribution::Shallow] {
                for sd_gamma in [0.0, 0.05, 0.10] {
                    for theta_eps in [1.0, 2.0] {
                        let mut c = SimulationCondition::new(waves, n, slope, sd_gamma, theta_eps);
                        c.id = grid.len();
                        grid.push(c);
                    }
                }
            }
        }
    }
    grid
}

/// Independent generator for one replication attempt of one condition.
pub fn replication_rng(master_seed: u64, condition_id: usize, attempt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(((condition_id as u64) << 40) | attempt);
    rng
}

/// Growth factors drawn from the multivariate normal design distribution.
/// With `sd_gamma = 0` every individual has `gamma = mu_gamma` exactly.
pub fn generate_factors<R: Rng + ?Sized>(cond: &SimulationCondition, rng: &mut R) -> Vec<GrowthFactors> {
    let truth = cond.truth();
    let k = if cond.sd_gamma > 0.0 { 4 } else { 3 };
    let cov: DMatrix<f64> = truth.covariance.view((0, 0), (k, k)).into_owned();
    let chol = cov.cholesky().expect("design covariance is positive definite");
    let l = chol.l();
    (0..cond.n)
        .map(|_| {
            let z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
            let mut v = truth.mean;
            for r in 0..k {
                v[r] += (0..=r).map(|c| l[(r, c)] * z[c]).sum::<f64>();
            }
            GrowthFactors {
                eta0: v[0],
                eta1: v[1],
                eta2: v[2],
                gamma: v[3],
            }
        })
        .collect()
}

/// Wave times jittered uniformly within `+/- window`. The first wave stays
/// at its design time unless `jitter_first_wave` is set.
pub fn generate_schedules<R: Rng + ?Sized>(cond: &SimulationCondition, rng: &mut R) -> Vec<Schedule> {
    let waves = cond.waves.times();
    (0..cond.n)
        .map(|_| {
            let times = waves
                .iter()
                .enumerate()
                .map(|(j, &t)| {
                    if cond.window > 0.0 && (j > 0 || cond.jitter_first_wave) {
                        t + rng.random_range(-cond.window..cond.window)
                    } else {
                        t
                    }
                })
                .collect();
            Schedule::new(times).expect("windows do not overlap")
        })
        .collect()
}

/// A simulated dataset with the growth factors that generated it.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub data: Dataset,
    pub factors: Vec<GrowthFactors>,
}

/// Outcomes from the exact growth curve plus iid normal residuals.
pub fn generate_dataset<R: Rng + ?Sized>(cond: &SimulationCondition, rng: &mut R) -> Result<GeneratedData> {
    cond.validate()?;
    let factors = generate_factors(cond, rng);
    dataset_from_factors(cond, factors, rng)
}

/// Growth factors whose sample mean and covariance (divisor `n`) equal the
/// design values exactly, for checks that should be free of sampling error.
pub fn generate_factors_exact<R: Rng + ?Sized>(cond: &SimulationCondition, rng: &mut R) -> Result<Vec<GrowthFactors>> {
    let truth = cond.truth();
    let k = if cond.sd_gamma > 0.0 { 4 } else { 3 };
    let n = cond.n;
    if n <= k {
        return Err(Error::Config(format!("exact moments need more than {k} draws")));
    }
    let mut z = DMatrix::<f64>::from_fn(n, k, |_, _| StandardNormal.sample(rng));
    for c in 0..k {
        let m = z.column(c).mean();
        z.column_mut(c).add_scalar_mut(-m);
    }
    let sz = z.transpose() * &z / n as f64;
    let lz = sz
        .cholesky()
        .ok_or_else(|| Error::Config("degenerate standard normal draws".into()))?
        .l();
    let target = truth.covariance.view((0, 0), (k, k)).into_owned();
    let l = target.cholesky().expect("design covariance is positive definite").l();
    // rows of z are whitened by lz^-1 and recoloured by l
    let map = l * lz.try_inverse().expect("triangular factor is invertible");
    let x = z * map.transpose();
    Ok((0..n)
        .map(|i| {
            let mut v = truth.mean;
            for c in 0..k {
                v[c] += x[(i, c)];
            }
            GrowthFactors {
                eta0: v[0],
                eta1: v[1],
                eta2: v[2],
                gamma: v[3],
            }
        })
        .collect())
}

/// Schedules and outcomes for given growth factors.
pub fn dataset_from_factors<R: Rng + ?Sized>(
    cond: &SimulationCondition,
    factors: Vec<GrowthFactors>,
    rng: &mut R,
) -> Result<GeneratedData> {
    cond.validate()?;
    if factors.len() != cond.n {
        return Err(Error::DimensionMismatch(format!("{} factor draws for n = {}", factors.len(), cond.n)));
    }
    let schedules = generate_schedules(cond, rng);
    let sd = cond.theta_eps.sqrt();
    let mut individuals = Vec::with_capacity(cond.n);
    for (i, (f, s)) in factors.iter().zip(schedules).enumerate() {
        let y = s
            .times()
            .iter()
            .map(|&t| {
                let e: f64 = StandardNormal.sample(rng);
                jb_value(f, t).map(|v| v + sd * e)
            })
            .collect::<Result<Vec<f64>>>()?;
        individuals.push(Individual {
            id: format!("{}", i + 1),
            y,
            schedule: s,
        });
    }
    Ok(GeneratedData {
        data: Dataset::new(individuals)?,
        factors,
    })
}
