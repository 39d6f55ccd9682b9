use serde::{Deserialize, Serialize};

use crate::estimation::wald_ci;

/// Whether bias and RMSE are divided by the population value. Parameters
/// whose population value is zero are reported on the absolute scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricScale {
    Relative,
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterMetrics {
    pub name: String,
    pub truth: f64,
    pub scale: MetricScale,
    pub mean_estimate: f64,
    /// Relative bias, or absolute bias when `scale` is absolute.
    pub bias: f64,
    pub empirical_se: f64,
    /// Relative RMSE, or absolute RMSE when `scale` is absolute.
    pub rmse: f64,
    pub coverage: f64,
    /// Monte Carlo standard error of `bias`, on the same scale.
    pub mc_se_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub model: String,
    pub replications: usize,
    pub parameters: Vec<ParameterMetrics>,
}

impl MetricSummary {
    pub fn get(&self, name: &str) -> Option<&ParameterMetrics> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

/// Performance metrics over `S` retained replications.
///
/// `estimates[s][p]` and `ses[s][p]` hold replication `s`, parameter `p`.
/// A missing standard error counts as a non-covering interval.
pub fn metrics(
    model: &str,
    names: &[String],
    truth: &[f64],
    estimates: &[Vec<f64>],
    ses: &[Vec<Option<f64>>],
    level: f64,
) -> MetricSummary {
    let s = estimates.len();
    let sf = s as f64;
    let parameters = names
        .iter()
        .enumerate()
        .map(|(p, name)| {
            let theta = truth[p];
            let values: Vec<f64> = estimates.iter().map(|e| e[p]).collect();
            let mean = values.iter().sum::<f64>() / sf;
            let bias = values.iter().map(|v| v - theta).sum::<f64>() / sf;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (sf - 1.0);
            let mse = values.iter().map(|v| (v - theta).powi(2)).sum::<f64>() / sf;
            let covered = values
                .iter()
                .zip(ses)
                .filter(|(v, se)| match se[p] {
                    Some(se) => {
                        let (lo, hi) = wald_ci(**v, se, level);
                        lo <= theta && theta <= hi
                    }
                    None => false,
                })
                .count();
            let (scale, denom) = if theta != 0.0 {
                (MetricScale::Relative, theta)
            } else {
                (MetricScale::Absolute, 1.0)
            };
            ParameterMetrics {
                name: name.clone(),
                truth: theta,
                scale,
                mean_estimate: mean,
                bias: bias / denom,
                empirical_se: var.sqrt(),
                rmse: mse.sqrt() / denom.abs(),
                coverage: covered as f64 / sf,
                mc_se_bias: (var / sf).sqrt() / denom.abs(),
            }
        })
        .collect();
    MetricSummary {
        model: model.to_string(),
        replications: s,
        parameters,
    }
}
