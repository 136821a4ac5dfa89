//! Minimum density power divergence estimation and sandwich covariance.

use nalgebra::{DMatrix, DVector};

use crate::alpha_likelihood::{check_compatible, q_alpha, Derivatives};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{model_expectation, q_term_derivatives, Dataset, InhModel, Parameter};
use crate::optim::{maximize, MaximizeOptions, SmoothObjective};

/// `θ ↦ Q_n^(α)(θ)` with analytic derivatives.
pub struct AlphaObjective<'a, M: InhModel + ?Sized> {
    pub model: &'a M,
    pub data: &'a Dataset,
    pub alpha: f64,
}

impl<'a, M: InhModel + ?Sized> AlphaObjective<'a, M> {
    pub fn new(model: &'a M, data: &'a Dataset, alpha: f64) -> Self {
        Self { model, data, alpha }
    }
}

impl<M: InhModel + ?Sized> SmoothObjective for AlphaObjective<'_, M> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        let theta = Parameter::from_vector(x.clone());
        Ok(q_alpha(self.model, self.data, &theta, self.alpha, Derivatives::None)?.value)
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let theta = Parameter::from_vector(x.clone());
        let q = q_alpha(self.model, self.data, &theta, self.alpha, Derivatives::Gradient)?;
        Ok(q.gradient.expect("gradient requested"))
    }

    fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.value_gradient_hessian(x)?.2)
    }

    fn value_gradient_hessian(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let theta = Parameter::from_vector(x.clone());
        let q = q_alpha(self.model, self.data, &theta, self.alpha, Derivatives::Hessian)?;
        Ok((q.value, q.gradient.unwrap(), q.hessian.unwrap()))
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Largest α increment between warm-started solves.
    pub continuation_step: f64,
    /// Explicit start; skips continuation when set.
    pub init: Option<Parameter>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-8,
            continuation_step: 0.1,
            init: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MdpdeResult {
    pub theta_hat: Parameter,
    pub q_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    /// `−∇²Q_n^(α)` at the returned point.
    pub neg_hessian: DMatrix<f64>,
    pub alpha: f64,
}

/// Relative eigenvalue threshold below which `−∇²Q` counts as singular.
pub const HESSIAN_TOLERANCE: f64 = 1e-12;

fn check_neg_hessian(neg_h: &DMatrix<f64>) -> Result<()> {
    let ev = linalg::sym_eigenvalues(neg_h);
    let lo = ev.first().copied().unwrap_or(0.0);
    let hi = ev.last().copied().unwrap_or(0.0);
    if !(hi > 0.0) || !(lo > HESSIAN_TOLERANCE * hi) {
        return Err(Error::SingularHessian { min_eigenvalue: lo });
    }
    Ok(())
}

/// MDPDE with the model's initial guess and α-continuation, or a cold start from `options.init`.
pub fn fit<M: InhModel + ?Sized>(
    model: &M,
    data: &Dataset,
    alpha: f64,
    options: &FitOptions,
) -> Result<MdpdeResult> {
    let init = match &options.init {
        Some(t) => t.clone(),
        None => model.initial_guess(data),
    };
    fit_with_init(model, data, alpha, init, options.init.is_none(), options)
}

/// MDPDE for any model; `continuation` solves on an α ladder from 0 upwards.
pub fn fit_with_init<M: InhModel + ?Sized>(
    model: &M,
    data: &Dataset,
    alpha: f64,
    init: Parameter,
    continuation: bool,
    options: &FitOptions,
) -> Result<MdpdeResult> {
    let r = fit_unchecked(model, data, alpha, init, continuation, options)?;
    check_neg_hessian(&r.neg_hessian)?;
    Ok(r)
}

/// As [`fit_with_init`] but without rejecting a singular `−∇²Q` at the end point.
pub(crate) fn fit_unchecked<M: InhModel + ?Sized>(
    model: &M,
    data: &Dataset,
    alpha: f64,
    init: Parameter,
    continuation: bool,
    options: &FitOptions,
) -> Result<MdpdeResult> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("alpha must be non-negative, got {alpha}")));
    }
    check_compatible(model, data)?;
    model.check_parameter(&init)?;
    let ladder = if continuation && alpha > 0.0 {
        let steps = (alpha / options.continuation_step).ceil().max(1.0) as usize;
        std::iter::once(0.0)
            .chain((1..=steps).map(|k| alpha * k as f64 / steps as f64))
            .collect::<Vec<_>>()
    } else {
        vec![alpha]
    };
    let mopts = MaximizeOptions {
        max_iterations: options.max_iterations,
        gradient_tolerance: options.gradient_tolerance,
        ..Default::default()
    };
    let mut x = init.into_vector();
    let mut iterations = 0;
    let mut last = None;
    for a in ladder {
        let obj = AlphaObjective::new(model, data, a);
        let r = maximize(&obj, &x, &mopts)?;
        iterations += r.iterations;
        x = r.x.clone();
        last = Some(r);
    }
    let r = last.expect("non-empty ladder");
    let neg_hessian = -&r.hessian;
    Ok(MdpdeResult {
        theta_hat: Parameter::from_vector(r.x),
        q_value: r.value,
        iterations,
        converged: r.converged,
        gradient_norm: r.gradient_norm,
        neg_hessian,
        alpha,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichMatrices {
    pub psi: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub psi_hat: DMatrix<f64>,
    pub at_theta: Parameter,
}

/// Population `Ψ_{n,α}` and `Ω_{n,α}` at θ when the truth is the model at `theta_g`.
///
/// `Ψ = −n⁻¹ Σ E_g[∇²q_i]` and `Ω = n⁻¹ Σ Var_g[∇q_i]`, where `q_i` is one
/// α-likelihood term. Closed forms are used when `theta == theta_g`;
/// otherwise the expectations are integrated numerically.
pub fn population_sandwich<M: InhModel + ?Sized>(
    model: &M,
    theta: &Parameter,
    alpha: f64,
    theta_g: &Parameter,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    model.check_parameter(theta)?;
    model.check_parameter(theta_g)?;
    let n = model.n_obs();
    let p = model.dim();
    let mut psi = DMatrix::zeros(p, p);
    let mut omega = DMatrix::zeros(p, p);
    for i in 0..n {
        let closed = if theta == theta_g {
            model.closed_form_sandwich_terms(i, theta, alpha)
        } else {
            None
        };
        let (pi, oi) = match closed {
            Some(t) => t,
            None => numeric_sandwich_terms(model, i, theta, alpha, theta_g)?,
        };
        psi += pi;
        omega += oi;
    }
    Ok((
        linalg::symmetrize(&(psi / n as f64)),
        linalg::symmetrize(&(omega / n as f64)),
    ))
}

fn numeric_sandwich_terms<M: InhModel + ?Sized>(
    model: &M,
    i: usize,
    theta: &Parameter,
    alpha: f64,
    theta_g: &Parameter,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = model.dim();
    // Layout: [∇q (p), vec ∇q∇qᵀ (p²), vec ∇²q (p²)].
    let moments = model_expectation(model, i, theta_g, |x| {
        match q_term_derivatives(model, i, x, theta, alpha, true) {
            Ok((g, Some(h))) => {
                let gg = &g * g.transpose();
                g.iter()
                    .chain(gg.iter())
                    .chain(h.iter())
                    .copied()
                    .collect()
            }
            _ => vec![0.0; p + 2 * p * p],
        }
    })?;
    let mean = DVector::from_column_slice(&moments[..p]);
    let second = DMatrix::from_column_slice(p, p, &moments[p..p + p * p]);
    let hess = DMatrix::from_column_slice(p, p, &moments[p + p * p..]);
    Ok((-hess, second - &mean * mean.transpose()))
}

/// Ψ and Ω at θ under the model at θ, plus `Ψ̂ = −n⁻¹∇²Q_n^(α)(θ)` from data.
pub fn sandwich<M: InhModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &Parameter,
    alpha: f64,
) -> Result<SandwichMatrices> {
    let (psi, omega) = population_sandwich(model, theta, alpha, theta)?;
    let q = q_alpha(model, data, theta, alpha, Derivatives::Hessian)?;
    let psi_hat = -q.hessian.unwrap() / data.n() as f64;
    Ok(SandwichMatrices {
        psi,
        omega,
        psi_hat,
        at_theta: theta.clone(),
    })
}

/// `Ψ⁻¹ΩΨ⁻¹ / n`.
pub fn asymptotic_covariance(sw: &SandwichMatrices, n: usize) -> Result<DMatrix<f64>> {
    let inv = linalg::inverse(&sw.psi)?;
    Ok(linalg::symmetrize(&(&inv * &sw.omega * &inv / n as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{zeta, Family, RegressionModel};

    fn linear_data() -> (RegressionModel, Dataset) {
        let z = DMatrix::from_row_slice(6, 2, &[1.0, 0.1, 1.0, -1.2, 1.0, 0.7, 1.0, 2.0, 1.0, -0.3, 1.0, 0.9]);
        let y = DVector::from_vec(vec![1.2, -0.9, 2.1, 3.5, 0.2, 1.9]);
        let d = Dataset::new(y, z.clone()).unwrap();
        (RegressionModel::new(Family::LinearKnownSigma { sigma: 1.0 }, z).unwrap(), d)
    }

    #[test]
    fn alpha_zero_linear_is_ols() {
        let (m, d) = linear_data();
        let r = fit(&m, &d, 0.0, &FitOptions::default()).unwrap();
        let z = d.design();
        let ols = (z.transpose() * z).try_inverse().unwrap() * z.transpose() * d.responses();
        assert!(r.converged);
        assert!((r.theta_hat.as_vector() - ols).amax() < 1e-8);
    }

    #[test]
    fn identity_design_sandwich() {
        let z = DMatrix::identity(2, 2);
        let m = RegressionModel::new(Family::LinearKnownSigma { sigma: 1.0 }, z.clone()).unwrap();
        let d = Dataset::new(DVector::from_vec(vec![0.3, -0.2]), z).unwrap();
        let sw = sandwich(&m, &d, &Parameter::new(vec![0.0, 0.0]), 0.0).unwrap();
        assert!((sw.psi - DMatrix::identity(2, 2) * 0.5).amax() < 1e-15);
    }

    #[test]
    fn known_sigma_covariance_constant() {
        let (m, d) = linear_data();
        let alpha = 0.4;
        let sw = sandwich(&m, &d, &Parameter::new(vec![0.5, 1.0]), alpha).unwrap();
        let cov = asymptotic_covariance(&sw, d.n()).unwrap();
        let z = d.design();
        let ups = (1.0 + alpha * alpha / (1.0 + 2.0 * alpha)).powf(1.5);
        let target = (z.transpose() * z).try_inverse().unwrap() * ups;
        assert!((cov - &target).amax() < 1e-12 * target.amax());
        assert!((ups - zeta(2.0 * alpha, 1.0) / zeta(alpha, 1.0).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn zero_column_is_singular() {
        let z = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let m = RegressionModel::new(Family::Logistic, z.clone()).unwrap();
        let d = Dataset::new(DVector::from_vec(vec![1.0, 0.0, 1.0]), z).unwrap();
        assert!(matches!(
            fit(&m, &d, 0.3, &FitOptions::default()),
            Err(Error::SingularHessian { .. })
        ));
    }
}
