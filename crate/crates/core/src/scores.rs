//! Mean growth-rate curves and regression factor scores.
//!
//! Latent variables are ordered `(growth factors, true scores, rates)`
//! throughout. For a schedule with `J` occasions that is `k + J + (J - 1)`
//! entries, with `k = 4` for the full model and `3` for the reduced one.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{wald_ci, Dataset, FitResult};
use crate::model::{growth_loadings, rate_loadings, rate_loadings_at, Expression, ModelSpec, PopulationParams, Schedule};

/// Rate loadings used for the latent rates. Rates are always placed at the
/// evaluation times of the model's expression; the growth-curve framework
/// uses interval midpoints.
fn score_rate_loadings(schedule: &Schedule, params: &PopulationParams, spec: &ModelSpec) -> Result<DMatrix<f64>> {
    let rate_spec = match spec.framework {
        crate::model::Framework::Lcsm => *spec,
        crate::model::Framework::Lgc => spec.with_expression(Expression::Midpoint),
    };
    rate_loadings(schedule, params.mu_gamma(), params.mu_eta2(), &rate_spec)
}

fn check(params: &PopulationParams, spec: &ModelSpec) -> Result<()> {
    spec.validate()?;
    if params.reduced != spec.is_reduced() {
        return Err(Error::DimensionMismatch(format!(
            "parameters carry {} factors but the model expects {}",
            params.n_factors(),
            spec.n_factors()
        )));
    }
    Ok(())
}

/// Mean interval rates `Lambda_r (mu_eta1, mu_eta2, 0)`.
pub fn mean_rate_curve(params: &PopulationParams, schedule: &Schedule, spec: &ModelSpec) -> Result<DVector<f64>> {
    check(params, spec)?;
    Ok(score_rate_loadings(schedule, params, spec)? * params.rate_mean())
}

/// Mean latent true scores `Lambda_g mu`.
pub fn mean_true_scores(params: &PopulationParams, schedule: &Schedule, spec: &ModelSpec) -> Result<DVector<f64>> {
    check(params, spec)?;
    Ok(growth_loadings(schedule, params, spec)? * params.structural_mean())
}

/// Mean growth rate with a population band at arbitrary times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub time: f64,
    pub mean_rate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// The band is `mean +/- z sqrt(diag(Lambda_r Psi_r Lambda_r'))`: the spread
/// of individual rates, not the uncertainty of the mean.
pub fn mean_rate_band(params: &PopulationParams, times: &[f64], level: f64) -> Result<Vec<RatePoint>> {
    let lr = rate_loadings_at(times, params.mu_gamma(), params.mu_eta2(), params.n_factors() - 1)?;
    let mean = &lr * params.rate_mean();
    let cov = &lr * params.rate_covariance() * lr.transpose();
    Ok(times
        .iter()
        .enumerate()
        .map(|(r, &time)| {
            let sd = cov[(r, r)].max(0.0).sqrt();
            let (lower, upper) = wald_ci(mean[r], sd, level);
            RatePoint {
                time,
                mean_rate: mean[r],
                lower,
                upper,
            }
        })
        .collect())
}

/// The matrices behind one individual's latent distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrices {
    /// `Gamma_i`, mapping growth-factor deviations to all latent variables.
    pub gamma_map: DMatrix<f64>,
    /// Growth-factor covariance in the leading block, zero elsewhere.
    pub s_core: DMatrix<f64>,
    /// `(Lambda_g 0 0)`.
    pub lambda_full: DMatrix<f64>,
    /// `Gamma_i S Gamma_i'`.
    pub latent_cov: DMatrix<f64>,
    pub latent_mean: DVector<f64>,
}

impl ScoreMatrices {
    pub fn new(schedule: &Schedule, params: &PopulationParams, spec: &ModelSpec) -> Result<Self> {
        check(params, spec)?;
        let k = spec.n_factors();
        let j = schedule.len();
        let d = k + j + (j - 1);
        let lg = growth_loadings(schedule, params, spec)?;
        let lr = score_rate_loadings(schedule, params, spec)?;
        let omega = crate::model::interval_matrix(schedule);

        let mut gamma_map = DMatrix::zeros(d, d);
        gamma_map.view_mut((0, 0), (k, k)).fill_with_identity();
        gamma_map.view_mut((k, 0), (j, k)).copy_from(&lg);
        for r in 0..j {
            for c in 0..=r {
                gamma_map[(k + r, k + c)] = 1.0;
            }
        }
        gamma_map.view_mut((k, k + j), (j, j - 1)).copy_from(&omega);
        gamma_map.view_mut((k + j, 1), (j - 1, k - 1)).copy_from(&lr);
        gamma_map.view_mut((k + j, k + j), (j - 1, j - 1)).fill_with_identity();

        let mut s_core = DMatrix::zeros(d, d);
        s_core.view_mut((0, 0), (k, k)).copy_from(&params.active_covariance());

        let mut lambda_full = DMatrix::zeros(j, d);
        lambda_full.view_mut((0, 0), (j, k)).copy_from(&lg);

        let latent_cov = latent_covariance(&gamma_map, &s_core)?;
        let mu = params.structural_mean();
        let mut latent_mean = DVector::zeros(d);
        latent_mean.rows_mut(0, k).copy_from(&mu);
        latent_mean.rows_mut(k, j).copy_from(&(&lg * &mu));
        latent_mean.rows_mut(k + j, j - 1).copy_from(&(&lr * params.rate_mean()));

        Ok(Self {
            gamma_map,
            s_core,
            lambda_full,
            latent_cov,
            latent_mean,
        })
    }
}

/// `Gamma S Gamma'`, symmetrised.
pub fn latent_covariance(gamma_map: &DMatrix<f64>, s_core: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if gamma_map.ncols() != s_core.nrows() || !s_core.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "map is {}x{} but core is {}x{}",
            gamma_map.nrows(),
            gamma_map.ncols(),
            s_core.nrows(),
            s_core.ncols()
        )));
    }
    let c = gamma_map * s_core * gamma_map.transpose();
    Ok((&c + c.transpose()) * 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVariableSet {
    /// `(eta0, eta1, eta2, gamma)`; `gamma` equals `mu_gamma` for reduced
    /// models.
    pub growth_factors: [f64; 4],
    pub true_scores: Vec<f64>,
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualScores {
    pub id: String,
    /// `None` when the individual's conditioning matrix is not positive
    /// definite.
    pub scores: Option<LatentVariableSet>,
}

/// Regression scores for one individual.
pub fn individual_scores(
    y: &DVector<f64>,
    schedule: &Schedule,
    params: &PopulationParams,
    spec: &ModelSpec,
) -> Result<Option<LatentVariableSet>> {
    let m = ScoreMatrices::new(schedule, params, spec)?;
    let k = spec.n_factors();
    let j = schedule.len();
    if y.len() != j {
        return Err(Error::DimensionMismatch(format!("{} outcomes for {j} occasions", y.len())));
    }
    let psi_l = &m.latent_cov * m.lambda_full.transpose();
    let mut cond = &m.lambda_full * &psi_l;
    for d in 0..j {
        cond[(d, d)] += params.residual_variance;
    }
    let cond = (&cond + cond.transpose()) * 0.5;
    let Some(chol) = cond.cholesky() else {
        return Ok(None);
    };
    let resid = y - &m.lambda_full * &m.latent_mean;
    let eta = &m.latent_mean + psi_l * chol.solve(&resid);

    let mut g = [0.0, 0.0, 0.0, params.mu_gamma()];
    for c in 0..k {
        g[c] = eta[c];
    }
    if k == 4 {
        g[3] = params.mu_gamma() + eta[3];
    }
    Ok(Some(LatentVariableSet {
        growth_factors: g,
        true_scores: eta.rows(k, j).iter().copied().collect(),
        rates: eta.rows(k + j, j - 1).iter().copied().collect(),
    }))
}

/// Regression factor scores for every individual, in dataset order.
pub fn factor_scores(data: &Dataset, result: &FitResult, spec: &ModelSpec) -> Result<Vec<IndividualScores>> {
    if result.spec != *spec {
        return Err(Error::DimensionMismatch("fit result belongs to a different model".into()));
    }
    data.individuals()
        .par_iter()
        .map(|ind| {
            Ok(IndividualScores {
                id: ind.id.clone(),
                scores: individual_scores(&ind.outcomes(), &ind.schedule, &result.estimates, spec)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{implied_moments, Framework};
    use approx::assert_relative_eq;
    use nalgebra::{Matrix4, Vector4};
    use proptest::prelude::*;

    fn params() -> PopulationParams {
        PopulationParams::from_correlation([50.0, 2.5, -30.0, -0.7], [4.0, 1.0, 6.0, 0.1], 0.3, 1.0).unwrap()
    }

    fn sched(t: &[f64]) -> Schedule {
        Schedule::new(t.to_vec()).unwrap()
    }

    #[test]
    fn noiseless_scores_recover_factors() {
        // outcomes follow the model's loading structure exactly
        let mut p = params().reduce();
        p.residual_variance = 1e-6;
        let spec = ModelSpec::reduced();
        let s = sched(&[0.0, 1.1, 1.9, 3.0, 4.2, 5.0, 6.1, 7.0, 8.0, 9.0]);
        let lg = crate::model::growth_loadings(&s, &p, &spec).unwrap();
        for eta in [[47.0, 2.1, -33.0], [55.5, 3.4, -24.0], [50.0, 2.5, -30.0]] {
            let y = &lg * nalgebra::DVector::from_column_slice(&eta);
            let set = individual_scores(&y, &s, &p, &spec).unwrap().unwrap();
            for c in 0..3 {
                assert!((set.growth_factors[c] - eta[c]).abs() < 1e-2, "{c}: {:?}", set.growth_factors);
            }
        }
    }

    #[test]
    fn mean_rate_at_origin() {
        let p = PopulationParams::new(Vector4::new(50.0, 1.0, -30.0, -0.7), Matrix4::zeros(), 1.0, false).unwrap();
        // midpoint of (-0.5, 0.5) is 0
        let r = mean_rate_curve(&p, &sched(&[-0.5, 0.5, 1.5]), &ModelSpec::full()).unwrap();
        assert_relative_eq!(r[0], 22.0, max_relative = 1e-14);
        assert!(r[1] < r[0] && r[1] > 1.0);
    }

    #[test]
    fn flat_mean_rate_without_curvature() {
        let p = PopulationParams::new(Vector4::new(50.0, 1.3, 0.0, -0.7), Matrix4::zeros(), 1.0, false).unwrap();
        let r = mean_rate_curve(&p, &sched(&[0.0, 1.0, 2.5, 4.0]), &ModelSpec::full()).unwrap();
        assert!(r.iter().all(|v| *v == 1.3));
    }

    #[test]
    fn true_score_means() {
        let s = sched(&[0.0, 1.0, 2.0, 3.5]);
        let mut p = params();
        let a = mean_true_scores(&p, &s, &ModelSpec::full()).unwrap();
        assert_eq!(a[0], 50.0);
        p.covariance *= 3.0;
        assert_eq!(a, mean_true_scores(&p, &s, &ModelSpec::full()).unwrap());
        // unit spacing, J = 2: rate 22.0 at midpoint 0.5 after shifting time
        let p = PopulationParams::new(Vector4::new(50.0, 1.0, -30.0, -0.7), Matrix4::zeros(), 1.0, false).unwrap();
        let m = mean_true_scores(&p, &sched(&[0.0, 1.0]), &ModelSpec::full()).unwrap();
        let rate = mean_rate_curve(&p, &sched(&[0.0, 1.0]), &ModelSpec::full()).unwrap();
        assert_relative_eq!(m[1], 50.0 + rate[0], max_relative = 1e-14);
        assert_relative_eq!(rate[0], 1.0 + 21.0 * (-0.35f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn latent_covariance_blocks() {
        let s = sched(&[0.0, 1.1, 2.0, 3.2]);
        let p = params();
        let spec = ModelSpec::full();
        let m = ScoreMatrices::new(&s, &p, &spec).unwrap();
        let psi = p.active_covariance();
        assert_eq!(m.latent_cov.view((0, 0), (4, 4)).into_owned(), psi);
        let lg = growth_loadings(&s, &p, &spec).unwrap();
        let expected = &lg * &psi * lg.transpose();
        assert!((m.latent_cov.view((4, 4), (4, 4)) - expected).abs().max() < 1e-10);

        let mut zero = p.clone();
        zero.covariance = Matrix4::zeros();
        let m = ScoreMatrices::new(&s, &zero, &spec).unwrap();
        assert!(m.latent_cov.iter().all(|v| *v == 0.0));
        assert!(latent_covariance(&DMatrix::zeros(3, 4), &DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn zero_residual_gives_mean_scores() {
        let s = sched(&[0.0, 1.1, 2.0, 3.2]);
        let p = params();
        let spec = ModelSpec::full();
        let y = implied_moments(&s, &p, &spec).unwrap().mean;
        let sc = individual_scores(&y, &s, &p, &spec).unwrap().unwrap();
        for (a, b) in sc.growth_factors.iter().zip([50.0, 2.5, -30.0, -0.7]) {
            assert_relative_eq!(*a, b, epsilon = 1e-10);
        }
        let mean_rates = mean_rate_curve(&p, &s, &spec).unwrap();
        for (a, b) in sc.rates.iter().zip(mean_rates.iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-10);
        }
    }

    #[test]
    fn no_latent_variance_ignores_data() {
        let s = sched(&[0.0, 1.0, 2.0]);
        let mut p = params();
        p.covariance = Matrix4::zeros();
        let sc = individual_scores(&DVector::from_vec(vec![1.0, -4.0, 90.0]), &s, &p, &ModelSpec::full())
            .unwrap()
            .unwrap();
        assert_eq!(sc.growth_factors, [50.0, 2.5, -30.0, -0.7]);
    }

    #[test]
    fn reduced_scores_carry_fixed_gamma() {
        let s = sched(&[0.0, 1.0, 2.0, 3.0]);
        let p = params().reduce();
        let sc = individual_scores(&DVector::from_vec(vec![48.0, 62.0, 71.0, 78.0]), &s, &p, &ModelSpec::reduced())
            .unwrap()
            .unwrap();
        assert_eq!(sc.growth_factors[3], -0.7);
        assert_eq!(sc.true_scores.len(), 4);
        assert_eq!(sc.rates.len(), 3);
    }

    #[test]
    fn band_collapses_without_variance() {
        let mut p = params();
        p.covariance = Matrix4::zeros();
        for pt in mean_rate_band(&p, &[0.0, 1.0, 5.0], 0.95).unwrap() {
            assert_eq!(pt.lower, pt.mean_rate);
            assert_eq!(pt.upper, pt.mean_rate);
        }
        let far = mean_rate_band(&params(), &[60.0], 0.95).unwrap()[0];
        assert_relative_eq!(far.mean_rate, 2.5, epsilon = 1e-12);
    }

    #[test]
    fn band_half_width_is_quadratic_form() {
        let p = params();
        let t = 1.7;
        let pt = mean_rate_band(&p, &[t], 0.95).unwrap()[0];
        let e = (-0.7f64 * t).exp();
        let l = nalgebra::DVector::from_vec(vec![1.0, -0.7 * e, -30.0 * e * (1.0 - 0.7 * t)]);
        let var = (l.transpose() * p.rate_covariance() * &l)[(0, 0)];
        assert_relative_eq!(pt.upper - pt.mean_rate, 1.959_963_984_540_054 * var.sqrt(), max_relative = 1e-9);
    }

    fn arb_schedule() -> impl Strategy<Value = Schedule> {
        proptest::collection::vec(0.3..1.5f64, 2..9).prop_map(|gaps| {
            let mut t = vec![0.0];
            for g in gaps {
                t.push(t.last().unwrap() + g);
            }
            Schedule::new(t).unwrap()
        })
    }

    proptest! {
        #[test]
        fn true_scores_telescope(s in arb_schedule(), noise in proptest::collection::vec(-5.0..5.0f64, 10)) {
            let p = params();
            for spec in [ModelSpec::full(), ModelSpec::reduced(), ModelSpec::full().with_expression(Expression::RightEndpoint)] {
                let p = if spec.is_reduced() { p.reduce() } else { p.clone() };
                let mean = implied_moments(&s, &p, &spec).unwrap().mean;
                let y = DVector::from_iterator(s.len(), mean.iter().zip(&noise).map(|(m, e)| m + e));
                let sc = individual_scores(&y, &s, &p, &spec).unwrap().unwrap();
                let t = s.times();
                for j in 1..s.len() {
                    let lhs = sc.true_scores[j] - sc.true_scores[j - 1];
                    let rhs = sc.rates[j - 1] * (t[j] - t[j - 1]);
                    prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
                }
            }
        }

        #[test]
        fn mean_rates_match_latent_mean(s in arb_schedule()) {
            let p = params();
            let spec = ModelSpec::full();
            let m = ScoreMatrices::new(&s, &p, &spec).unwrap();
            let r = mean_rate_curve(&p, &s, &spec).unwrap();
            let j = s.len();
            for i in 0..j - 1 {
                prop_assert!((m.latent_mean[4 + j + i] - r[i]).abs() <= 1e-12);
            }
        }

        #[test]
        fn latent_covariance_is_psd(s in arb_schedule()) {
            let m = ScoreMatrices::new(&s, &params(), &ModelSpec::full()).unwrap();
            let eig = m.latent_cov.clone().symmetric_eigenvalues();
            let scale = m.latent_cov.abs().max();
            prop_assert!(eig.iter().all(|e| *e >= -1e-9 * scale));
        }
    }

    #[test]
    fn growth_curve_framework_scores() {
        let s = sched(&[0.0, 1.0, 2.0, 3.0]);
        let spec = ModelSpec::full().with_framework(Framework::Lgc);
        let sc = individual_scores(&DVector::from_vec(vec![48.0, 62.0, 71.0, 78.0]), &s, &params(), &spec)
            .unwrap()
            .unwrap();
        assert_eq!(sc.rates.len(), 3);
    }
}
