use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::params::ParamLayout;
use super::{Dataset, Individual};
use crate::error::{Error, Result};
use crate::model::{growth_loading_derivatives, moments_from_loadings, ModelSpec, PopulationParams};

/// Log-density of one individual's outcomes, constant included.
pub fn individual_loglik(ind: &Individual, params: &PopulationParams, spec: &ModelSpec) -> Result<f64> {
    let lg = crate::model::growth_loadings(&ind.schedule, params, spec)?;
    let m = moments_from_loadings(&lg, params);
    let chol = m.covariance.cholesky().ok_or(Error::IndefiniteCovariance(0))?;
    let r = ind.outcomes() - m.mean;
    Ok(gaussian_log_density(&chol, &r))
}

fn gaussian_log_density(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>, r: &DVector<f64>) -> f64 {
    let j = r.len() as f64;
    let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let a = chol.solve(r);
    -0.5 * j * (2.0 * PI).ln() - 0.5 * logdet - 0.5 * r.dot(&a)
}

/// Sum of individual log-likelihoods.
///
/// Contributions are summed in sorted order so the result does not depend on
/// the order of individuals in the dataset.
pub fn fiml_loglik(params: &PopulationParams, data: &Dataset, spec: &ModelSpec) -> Result<f64> {
    let mut terms = data
        .individuals()
        .iter()
        .enumerate()
        .map(|(i, ind)| {
            individual_loglik(ind, params, spec).map_err(|e| match e {
                Error::IndefiniteCovariance(_) => Error::IndefiniteCovariance(i),
                other => other,
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    terms.sort_by(f64::total_cmp);
    Ok(terms.iter().sum())
}

/// Log-likelihood and its analytic gradient in [`ParamLayout`] order (the
/// residual variance on its natural scale).
pub fn loglik_gradient(params: &PopulationParams, data: &Dataset, spec: &ModelSpec) -> Result<(f64, Vec<f64>)> {
    let layout = ParamLayout::new(spec);
    let k = spec.n_factors();
    let psi = params.active_covariance();
    let fmean = params.structural_mean();
    let mut total = 0.0;
    let mut grad = vec![0.0; layout.len()];

    for (i, ind) in data.individuals().iter().enumerate() {
        let d = growth_loading_derivatives(&ind.schedule, params.mu_gamma(), params.mu_eta2(), spec)?;
        let lg = &d.loadings;
        let m = moments_from_loadings(lg, params);
        let chol = m
            .covariance
            .cholesky()
            .ok_or(Error::IndefiniteCovariance(i))?;
        let r = ind.outcomes() - &m.mean;
        total += gaussian_log_density(&chol, &r);

        let a = chol.solve(&r);
        // W = Sigma^-1 - a a^T; d ll = -1/2 tr(W dSigma) + a^T dmu
        let mut w = chol.inverse();
        w.ger(-1.0, &a, &a, 1.0);
        let wl = &w * lg;
        let info = lg.transpose() * &wl;
        let lta = lg.transpose() * &a;

        for c in 0..3 {
            grad[c] += lta[c];
        }
        let wlp: DMatrix<f64> = &wl * &psi;
        let through_loadings = |dl: &DMatrix<f64>| -> f64 { -dl.component_mul(&wlp).sum() + a.dot(&(dl * &fmean)) };
        grad[3] += through_loadings(&d.d_mu_gamma);
        grad[2] += through_loadings(&d.d_mu_eta2);
        for (p, &(r, c)) in layout.pairs().iter().enumerate() {
            debug_assert!(r < k && c < k);
            grad[4 + p] += if r == c { -0.5 * info[(r, r)] } else { -info[(r, c)] };
        }
        grad[layout.residual_index()] += -0.5 * w.trace();
    }
    Ok((total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::Individual;
    use crate::model::{Expression, Framework, Schedule};
    use approx::assert_relative_eq;
    use nalgebra::{Matrix4, Vector4};

    fn toy_data() -> Dataset {
        let rows = [
            (vec![49.0, 66.0, 74.5, 80.0], vec![0.0, 1.1, 2.0, 3.2]),
            (vec![53.0, 69.0, 79.0, 85.5], vec![-0.2, 0.9, 2.1, 2.8]),
            (vec![45.5, 60.0, 70.0, 77.0], vec![0.1, 1.0, 1.9, 3.0]),
        ];
        Dataset::new(
            rows.iter()
                .enumerate()
                .map(|(i, (y, t))| Individual {
                    id: i.to_string(),
                    y: y.clone(),
                    schedule: Schedule::new(t.clone()).unwrap(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn standard_normal_at_zero() {
        let data = Dataset::new(vec![Individual {
            id: "a".into(),
            y: vec![0.0],
            schedule: Schedule::new(vec![0.0]).unwrap(),
        }])
        .unwrap();
        let p = PopulationParams::new(Vector4::zeros(), Matrix4::zeros(), 1.0, false).unwrap();
        let ll = fiml_loglik(&p, &data, &ModelSpec::full()).unwrap();
        assert_relative_eq!(ll, -0.918_938_533_204_672_7, max_relative = 1e-14);
    }

    #[test]
    fn duplicating_individuals_doubles_loglik() {
        let data = toy_data();
        let mut twice = data.individuals().to_vec();
        twice.extend_from_slice(data.individuals());
        let twice = Dataset::new(twice).unwrap();
        let p = PopulationParams::from_correlation([50.0, 2.5, -30.0, -0.7], [4.0, 1.0, 6.0, 0.1], 0.3, 1.0).unwrap();
        let spec = ModelSpec::full();
        let a = fiml_loglik(&p, &data, &spec).unwrap();
        let b = fiml_loglik(&p, &twice, &spec).unwrap();
        assert_relative_eq!(b, 2.0 * a, max_relative = 1e-13);
    }

    #[test]
    fn indefinite_covariance_is_an_error() {
        let mut p =
            PopulationParams::from_correlation([50.0, 2.5, -30.0, -0.7], [4.0, 1.0, 6.0, 0.1], 0.3, 1.0).unwrap();
        p.covariance[(0, 0)] = -50.0;
        assert!(matches!(
            fiml_loglik(&p, &toy_data(), &ModelSpec::full()),
            Err(Error::IndefiniteCovariance(_))
        ));
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let data = toy_data();
        for spec in [
            ModelSpec::full(),
            ModelSpec::reduced(),
            ModelSpec::full().with_expression(Expression::RightEndpoint),
            ModelSpec::full().with_framework(Framework::Lgc),
        ] {
            let p = PopulationParams::from_correlation([49.0, 2.2, -28.0, -0.65], [4.0, 1.0, 6.0, 0.1], 0.25, 1.3)
                .unwrap();
            let p = if spec.is_reduced() { p.reduce() } else { p };
            let layout = ParamLayout::new(&spec);
            let x = layout.pack(&p);
            let (_, g) = loglik_gradient(&p, &data, &spec).unwrap();
            for i in 0..x.len() {
                let h = 1e-5 * (1.0 + x[i].abs());
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let fp = fiml_loglik(&layout.unpack(&xp), &data, &spec).unwrap();
                let fm = fiml_loglik(&layout.unpack(&xm), &data, &spec).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                assert!(
                    (fd - g[i]).abs() <= 1e-4 * (1.0 + g[i].abs()),
                    "{spec:?} param {i}: fd {fd} analytic {}",
                    g[i]
                );
            }
        }
    }

    #[test]
    fn gradient_value_agrees_with_loglik() {
        let data = toy_data();
        let p = PopulationParams::from_correlation([50.0, 2.5, -30.0, -0.7], [4.0, 1.0, 6.0, 0.1], 0.3, 1.0).unwrap();
        let spec = ModelSpec::full();
        let (ll, _) = loglik_gradient(&p, &data, &spec).unwrap();
        assert_relative_eq!(ll, fiml_loglik(&p, &data, &spec).unwrap(), max_relative = 1e-12);
    }
}
