use nalgebra::{Matrix4, Vector4};

use crate::model::{ModelSpec, PopulationParams};

const FULL_PAIRS: [(usize, usize); 10] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (0, 3),
    (1, 1),
    (1, 2),
    (1, 3),
    (2, 2),
    (2, 3),
    (3, 3),
];

const REDUCED_PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

const FACTOR_TAGS: [&str; 4] = ["0", "1", "2", "g"];

/// Order of the free parameters: four means, the lower triangle of the
/// factor covariance row by row, then the residual variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    reduced: bool,
}

impl ParamLayout {
    pub fn new(spec: &ModelSpec) -> Self {
        Self {
            reduced: spec.is_reduced(),
        }
    }

    pub fn len(&self) -> usize {
        4 + self.pairs().len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_reduced(&self) -> bool {
        self.reduced
    }

    pub fn pairs(&self) -> &'static [(usize, usize)] {
        if self.reduced {
            &REDUCED_PAIRS
        } else {
            &FULL_PAIRS
        }
    }

    pub fn residual_index(&self) -> usize {
        self.len() - 1
    }

    /// Index of the covariance entry `(r, c)` in the packed vector.
    pub fn covariance_index(&self, r: usize, c: usize) -> Option<usize> {
        let (r, c) = if r <= c { (r, c) } else { (c, r) };
        self.pairs().iter().position(|&p| p == (r, c)).map(|k| 4 + k)
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = vec![
            "mu_eta0".to_string(),
            "mu_eta1".to_string(),
            "mu_eta2".to_string(),
            "mu_gamma".to_string(),
        ];
        names.extend(
            self.pairs()
                .iter()
                .map(|&(r, c)| format!("psi_{}{}", FACTOR_TAGS[r], FACTOR_TAGS[c])),
        );
        names.push("theta_eps".to_string());
        names
    }

    pub fn pack(&self, params: &PopulationParams) -> Vec<f64> {
        let mut v: Vec<f64> = params.mean.iter().copied().collect();
        v.extend(self.pairs().iter().map(|&(r, c)| params.covariance[(r, c)]));
        v.push(params.residual_variance);
        v
    }

    /// Unchecked inverse of [`ParamLayout::pack`]; variances may be negative.
    pub fn unpack(&self, v: &[f64]) -> PopulationParams {
        debug_assert_eq!(v.len(), self.len());
        let mean = Vector4::new(v[0], v[1], v[2], v[3]);
        let mut covariance = Matrix4::zeros();
        for (k, &(r, c)) in self.pairs().iter().enumerate() {
            covariance[(r, c)] = v[4 + k];
            covariance[(c, r)] = v[4 + k];
        }
        PopulationParams {
            mean,
            covariance,
            residual_variance: v[self.residual_index()],
            reduced: self.reduced,
        }
    }
}
