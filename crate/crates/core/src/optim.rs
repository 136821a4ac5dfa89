//! Damped Newton maximization with Armijo backtracking.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::numeric::{fd_gradient, fd_jacobian};

/// A twice-differentiable objective to be maximized.
///
/// `value` may return an error or a non-finite number outside the domain;
/// the line search treats both as a failed step.
pub trait SmoothObjective {
    fn dim(&self) -> usize;

    fn value(&self, x: &DVector<f64>) -> Result<f64>;

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(fd_gradient(
            |y| self.value(y).unwrap_or(f64::NAN),
            x,
            1e-6,
        ))
    }

    fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(fd_jacobian(
            |y| {
                self.gradient(y)
                    .unwrap_or_else(|_| DVector::from_element(y.len(), f64::NAN))
            },
            x,
            1e-5,
        ))
    }

    fn value_gradient_hessian(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        Ok((self.value(x)?, self.gradient(x)?, self.hessian(x)?))
    }
}

/// Adapts a closure into a [`SmoothObjective`] with finite-difference derivatives.
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&DVector<f64>) -> Result<f64>> FnObjective<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&DVector<f64>) -> Result<f64>> SmoothObjective for FnObjective<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MaximizeOptions {
    pub max_iterations: usize,
    /// Converged when `‖∇f‖ < gradient_tolerance · (1 + |f|)`.
    pub gradient_tolerance: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for MaximizeOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-8,
            armijo: 1e-4,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MaximizeResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
}

/// Ascent direction: Newton when `−H` is positive definite, otherwise Newton
/// on `−H + τI` with τ large enough to make it so (a scaled gradient step
/// whenever the curvature is useless).
fn ascent_direction(g: &DVector<f64>, h: &DMatrix<f64>) -> DVector<f64> {
    let neg = -h;
    if let Ok(chol) = linalg::cholesky(&neg) {
        let d = chol.solve(g);
        if d.iter().all(|v| v.is_finite()) && d.dot(g) > 0.0 {
            return d;
        }
    }
    let ev = linalg::sym_eigenvalues(&neg);
    let lo = ev.first().copied().unwrap_or(0.0);
    let hi = ev.last().copied().unwrap_or(0.0).abs().max(1.0);
    let tau = (-lo).max(0.0) + 1e-3 * hi;
    let shifted = neg + DMatrix::identity(g.len(), g.len()) * tau;
    match linalg::cholesky(&shifted) {
        Ok(chol) => chol.solve(g),
        Err(_) => g / hi,
    }
}

pub fn maximize<O: SmoothObjective + ?Sized>(
    objective: &O,
    x0: &DVector<f64>,
    options: &MaximizeOptions,
) -> Result<MaximizeResult> {
    if x0.len() != objective.dim() {
        return Err(Error::Dimension(format!(
            "start has length {}, objective expects {}",
            x0.len(),
            objective.dim()
        )));
    }
    let (mut f, mut g, mut h) = objective.value_gradient_hessian(x0)?;
    if !f.is_finite() {
        return Err(Error::NoStartingPoint("objective is not finite at the start".into()));
    }
    let mut x = x0.clone();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iterations {
        if g.norm() < options.gradient_tolerance * (1.0 + f.abs()) {
            converged = true;
            break;
        }
        iterations += 1;
        let d = ascent_direction(&g, &h);
        let slope = g.dot(&d);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..options.max_backtracks {
            let trial = &x + &d * step;
            if let Ok(ft) = objective.value(&trial) {
                if ft.is_finite() && ft >= f + options.armijo * step * slope {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            step *= 0.5;
        }
        if accepted.is_none() {
            // Near the optimum the Armijo test is lost in rounding; accept a
            // full step that does not lose value and shrinks the gradient.
            let trial = &x + &d;
            if let Ok(ft) = objective.value(&trial) {
                if ft.is_finite() && ft >= f - 1e-12 * (1.0 + f.abs()) {
                    if let Ok(gt) = objective.gradient(&trial) {
                        if gt.norm() < g.norm() {
                            accepted = Some((trial, ft));
                        }
                    }
                }
            }
        }
        match accepted {
            Some((xn, _)) => {
                x = xn;
                let (fv, gv, hv) = objective.value_gradient_hessian(&x)?;
                f = fv;
                g = gv;
                h = hv;
            }
            None => break,
        }
    }
    let gradient_norm = g.norm();
    if !converged && gradient_norm < options.gradient_tolerance * (1.0 + f.abs()) {
        converged = true;
    }
    Ok(MaximizeResult {
        x,
        value: f,
        gradient: g,
        hessian: h,
        iterations,
        converged,
        gradient_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_in_one_step() {
        let obj = FnObjective::new(2, |x: &DVector<f64>| {
            Ok(-(x[0] - 1.0).powi(2) - 3.0 * (x[1] + 2.0).powi(2) + 0.5 * x[0] * x[1])
        });
        let r = maximize(&obj, &DVector::zeros(2), &Default::default()).unwrap();
        assert!(r.converged);
        assert!(r.gradient_norm < 1e-6);
    }

    #[test]
    fn rosenbrock_from_nonconvex_region() {
        let obj = FnObjective::new(2, |x: &DVector<f64>| {
            Ok(-((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)))
        });
        let opts = MaximizeOptions {
            gradient_tolerance: 1e-6,
            ..Default::default()
        };
        let r = maximize(&obj, &DVector::from_vec(vec![-1.2, 1.0]), &opts).unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn domain_violation_backtracks() {
        // log x − x, maximized at 1; the first Newton step from 3 leaves the domain.
        let obj = FnObjective::new(1, |x: &DVector<f64>| {
            if x[0] <= 0.0 {
                Err(Error::Domain("x must be positive".into()))
            } else {
                Ok(x[0].ln() - x[0])
            }
        });
        let r = maximize(&obj, &DVector::from_element(1, 3.0), &Default::default()).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6);
    }
}
