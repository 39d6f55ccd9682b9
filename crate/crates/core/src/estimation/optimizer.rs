//! BFGS minimisation with a backtracking Armijo line search.
//!
//! The objective may reject a point by returning `None` (for example when an
//! implied covariance is indefinite); the line search then shortens the step.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub relative_tolerance: f64,
    /// Number of iterations over which the relative change is measured.
    pub stall_window: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            relative_tolerance: 1e-10,
            stall_window: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientNorm,
    RelativeChange,
    MaxIterations,
    LineSearchFailed,
    InfeasibleStart,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(self, Termination::GradientNorm | Termination::RelativeChange)
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Minimise `objective`, which returns the value and gradient at a point.
///
/// `inverse_hessian` seeds the BFGS approximation; the identity is used when
/// it is `None`.
pub fn minimize<F>(mut objective: F, x0: DVector<f64>, inverse_hessian: Option<DMatrix<f64>>, opts: &BfgsOptions) -> Minimum
where
    F: FnMut(&DVector<f64>) -> Option<(f64, DVector<f64>)>,
{
    let n = x0.len();
    let h0 = inverse_hessian.unwrap_or_else(|| DMatrix::identity(n, n));
    let Some((mut f, mut g)) = objective(&x0) else {
        return Minimum {
            gradient: DVector::from_element(n, f64::NAN),
            x: x0,
            value: f64::INFINITY,
            iterations: 0,
            termination: Termination::InfeasibleStart,
        };
    };
    let mut x = x0;
    let mut h = h0.clone();
    let mut history = vec![f];

    for iter in 0..opts.max_iterations {
        if g.norm() < opts.gradient_tolerance {
            return done(x, f, g, iter, Termination::GradientNorm);
        }
        let mut dir = -(&h * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            h = h0.clone();
            dir = -(&h * &g);
            slope = g.dot(&dir);
            if !(slope < 0.0) {
                dir = -g.clone();
                slope = -g.norm_squared();
            }
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = &x + &dir * step;
            if let Some((ft, gt)) = objective(&trial) {
                if ft.is_finite() && ft <= f + ARMIJO * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            return done(x, f, g, iter, Termination::LineSearchFailed);
        };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if iter == 0 && h0 == DMatrix::identity(n, n) {
                h *= sy / y.norm_squared();
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (H y s^T + s y^T H) + (rho^2 y^T H y + rho) s s^T
            h -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }

        x = x_new;
        f = f_new;
        g = g_new;
        history.push(f);
        let w = opts.stall_window;
        if history.len() > w {
            let old = history[history.len() - 1 - w];
            if (old - f).abs() <= opts.relative_tolerance * f.abs().max(1.0) {
                return done(x, f, g, iter + 1, Termination::RelativeChange);
            }
        }
    }
    let iterations = opts.max_iterations;
    if g.norm() < opts.gradient_tolerance {
        return done(x, f, g, iterations, Termination::GradientNorm);
    }
    done(x, f, g, iterations, Termination::MaxIterations)
}

fn done(x: DVector<f64>, value: f64, gradient: DVector<f64>, iterations: usize, termination: Termination) -> Minimum {
    Minimum {
        x,
        value,
        gradient,
        iterations,
        termination,
    }
}

/// Symmetrised central-difference Jacobian of a gradient function.
pub fn hessian_from_gradient<G>(mut gradient: G, x: &DVector<f64>, relative_step: f64) -> Option<DMatrix<f64>>
where
    G: FnMut(&DVector<f64>) -> Option<DVector<f64>>,
{
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let step = relative_step * (1.0 + x[i].abs());
        let mut xp = x.clone();
        xp[i] += step;
        let mut xm = x.clone();
        xm[i] -= step;
        let gp = gradient(&xp)?;
        let gm = gradient(&xm)?;
        h.set_column(i, &((gp - gm) / (2.0 * step)));
    }
    Some((&h + h.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = DVector::from_vec(vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
        Some((f, g))
    }

    #[test]
    fn finds_rosenbrock_minimum() {
        let m = minimize(rosenbrock, DVector::from_vec(vec![-1.2, 1.0]), None, &BfgsOptions::default());
        assert!(m.termination.converged(), "{:?}", m.termination);
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{}", m.x);
    }

    #[test]
    fn respects_rejected_region() {
        // minimum of (x - 2)^2 restricted to x < 1.5 by rejection is not reachable;
        // the iterate must stay feasible
        let obj = |x: &DVector<f64>| {
            if x[0] >= 1.5 {
                None
            } else {
                Some(((x[0] - 2.0).powi(2), DVector::from_element(1, 2.0 * (x[0] - 2.0))))
            }
        };
        let m = minimize(obj, DVector::from_element(1, 0.0), None, &BfgsOptions::default());
        assert!(m.x[0] < 1.5 && m.value.is_finite());
        assert!(m.x[0] > 1.4, "{}", m.x[0]);
    }

    #[test]
    fn infeasible_start_is_reported() {
        let m = minimize(|_| None, DVector::from_element(2, 0.0), None, &BfgsOptions::default());
        assert_eq!(m.termination, Termination::InfeasibleStart);
    }

    #[test]
    fn hessian_of_quadratic() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let h = hessian_from_gradient(|x| Some(&a * x), &DVector::from_vec(vec![0.3, -2.0]), 1e-4).unwrap();
        assert!((h - a).abs().max() < 1e-9);
    }
}
