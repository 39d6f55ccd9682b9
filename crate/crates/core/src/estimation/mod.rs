//! Full-information maximum likelihood estimation of the model family.

mod fit;
mod likelihood;
pub mod optimizer;
mod params;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Schedule;

pub use fit::{
    default_start, detect_improper, fit, fit_indices, fit_nested, fit_with_start, se_from_information,
    standard_errors, wald_ci, wald_p_value, FitConfig, FitIndices, FitResult, FitStatus, ImproperFlags,
    NESTING_TOLERANCE,
};
pub use likelihood::{fiml_loglik, individual_loglik, loglik_gradient};
pub use params::ParamLayout;

/// One individual's outcomes and measurement occasions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub id: String,
    pub y: Vec<f64>,
    pub schedule: Schedule,
}

impl Individual {
    pub fn outcomes(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.y)
    }
}

/// Complete-case wide data: every individual has the same number of waves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    individuals: Vec<Individual>,
    n_waves: usize,
}

impl Dataset {
    pub fn new(individuals: Vec<Individual>) -> Result<Self> {
        let first = individuals
            .first()
            .ok_or_else(|| Error::InvalidData("dataset has no individuals".into()))?;
        let n_waves = first.schedule.len();
        for (i, ind) in individuals.iter().enumerate() {
            if ind.schedule.len() != n_waves || ind.y.len() != n_waves {
                return Err(Error::InvalidData(format!(
                    "individual {} ({}) has {} outcomes and {} occasions, expected {n_waves}",
                    i + 1,
                    ind.id,
                    ind.y.len(),
                    ind.schedule.len()
                )));
            }
            if ind.y.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("individual {} ({}) has non-finite outcomes", i + 1, ind.id)));
            }
        }
        Ok(Self { individuals, n_waves })
    }

    pub fn individuals(&self) -> &[Individual] {
        &self.individuals
    }

    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    pub fn n_waves(&self) -> usize {
        self.n_waves
    }
}
