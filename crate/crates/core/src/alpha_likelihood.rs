//! The α-likelihood `Q_n^(α)` on observed data and its population functional.
//!
//! Each observation contributes
//! `(1/α) f^α(x_i) − (1/(1+α)) ∫ f^{1+α} − 1/α`, which tends to `log f(x_i) − 1`
//! as α → 0. The α = 0 case is evaluated on its own branch as the exact
//! log-likelihood minus n; for α > 0 the first and last pieces are combined
//! through `expm1` so small α does not cancel catastrophically.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{q_term_derivatives, Dataset, InhModel, Parameter};
use crate::numeric::{box_cox_from_log, log_sum_exp, CompensatedSum};

/// Which derivatives to compute alongside the value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivatives {
    None,
    Gradient,
    Hessian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaLikelihoodValue {
    pub value: f64,
    pub gradient: Option<DVector<f64>>,
    pub hessian: Option<DMatrix<f64>>,
    pub alpha: f64,
}

/// True distribution of each observation for population-level analyses.
#[derive(Debug, Clone, PartialEq)]
pub enum TrueDistributionSpec {
    /// `G_i = F_{i,θ_g}`.
    InModel { theta_g: Parameter },
    /// `G_{i,ε} = (1−ε) F_{i,θ_g} + ε Λ_{t_i}`.
    Contaminated {
        theta_g: Parameter,
        eps: f64,
        points: Vec<f64>,
    },
}

impl TrueDistributionSpec {
    pub fn in_model(theta_g: Parameter) -> Self {
        Self::InModel { theta_g }
    }

    pub fn contaminated(theta_g: Parameter, eps: f64, points: Vec<f64>) -> Result<Self> {
        let spec = Self::Contaminated {
            theta_g,
            eps,
            points,
        };
        spec.validate(None)?;
        Ok(spec)
    }

    pub fn theta_g(&self) -> &Parameter {
        match self {
            Self::InModel { theta_g } | Self::Contaminated { theta_g, .. } => theta_g,
        }
    }

    /// Checks ε ∈ [0,1), finite points and, when given, one point per observation.
    pub fn validate(&self, n: Option<usize>) -> Result<()> {
        if let Self::Contaminated { eps, points, .. } = self {
            if !(0.0..1.0).contains(eps) {
                return Err(Error::Domain(format!("eps must lie in [0, 1), got {eps}")));
            }
            if points.iter().any(|t| !t.is_finite()) {
                return Err(Error::Domain("contamination points must be finite".into()));
            }
            if let Some(n) = n {
                if points.len() != n {
                    return Err(Error::Dimension(format!(
                        "{} contamination points for {} observations",
                        points.len(),
                        n
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("alpha must be non-negative, got {alpha}")));
    }
    Ok(())
}

pub(crate) fn check_compatible<M: InhModel + ?Sized>(model: &M, data: &Dataset) -> Result<()> {
    if model.n_obs() != data.n() {
        return Err(Error::Dimension(format!(
            "model has {} observations, data has {}",
            model.n_obs(),
            data.n()
        )));
    }
    Ok(())
}

/// One observation's contribution to `Q_n^(α)`.
pub fn q_term<M: InhModel + ?Sized>(
    model: &M,
    i: usize,
    x: f64,
    theta: &Parameter,
    alpha: f64,
) -> Result<f64> {
    let log_f = model.log_density(i, x, theta)?;
    if alpha == 0.0 {
        return Ok(log_f - 1.0);
    }
    let integral = model.log_integral_power(i, theta, alpha)?.exp();
    Ok(box_cox_from_log(log_f, alpha) - integral / (1.0 + alpha))
}

/// `Q_n^(α)(θ)` for observed data, optionally with gradient and Hessian.
pub fn q_alpha<M: InhModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &Parameter,
    alpha: f64,
    derivatives: Derivatives,
) -> Result<AlphaLikelihoodValue> {
    check_alpha(alpha)?;
    check_compatible(model, data)?;
    model.check_parameter(theta)?;
    let mut value = CompensatedSum::new();
    for i in 0..data.n() {
        value.add(q_term(model, i, data.response(i), theta, alpha)?);
    }
    let (gradient, hessian) = match derivatives {
        Derivatives::None => (None, None),
        d => {
            let with_h = d == Derivatives::Hessian;
            let p = model.dim();
            let mut g = DVector::zeros(p);
            let mut h = if with_h { Some(DMatrix::zeros(p, p)) } else { None };
            for i in 0..data.n() {
                let (gi, hi) = q_term_derivatives(model, i, data.response(i), theta, alpha, with_h)?;
                g += gi;
                if let (Some(h), Some(hi)) = (h.as_mut(), hi) {
                    *h += hi;
                }
            }
            (Some(g), h.map(|h| crate::linalg::symmetrize(&h)))
        }
    };
    Ok(AlphaLikelihoodValue {
        value: value.value(),
        gradient,
        hessian,
        alpha,
    })
}

/// `log ∫ f_{i,θ}^α dG_i` for one index under `spec` (α > 0).
pub(crate) fn log_expected_power_under<M: InhModel + ?Sized>(
    model: &M,
    spec: &TrueDistributionSpec,
    i: usize,
    theta: &Parameter,
    alpha: f64,
) -> Result<f64> {
    match spec {
        TrueDistributionSpec::InModel { theta_g } => {
            model.log_expected_density_power(i, theta, alpha, theta_g)
        }
        TrueDistributionSpec::Contaminated {
            theta_g,
            eps,
            points,
        } => {
            let base = model.log_expected_density_power(i, theta, alpha, theta_g)?;
            if *eps == 0.0 {
                return Ok(base);
            }
            let at_point = alpha * model.log_density(i, points[i], theta)?;
            Ok(log_sum_exp(&[
                (1.0 - eps).ln() + base,
                eps.ln() + at_point,
            ]))
        }
    }
}

/// `∫ log f_{i,θ} dG_i` for one index under `spec`.
pub(crate) fn expected_log_under<M: InhModel + ?Sized>(
    model: &M,
    spec: &TrueDistributionSpec,
    i: usize,
    theta: &Parameter,
) -> Result<f64> {
    match spec {
        TrueDistributionSpec::InModel { theta_g } => model.expected_log_density(i, theta, theta_g),
        TrueDistributionSpec::Contaminated {
            theta_g,
            eps,
            points,
        } => {
            let base = model.expected_log_density(i, theta, theta_g)?;
            if *eps == 0.0 {
                return Ok(base);
            }
            Ok((1.0 - eps) * base + eps * model.log_density(i, points[i], theta)?)
        }
    }
}

/// Population α-likelihood `Σ_i [(1/α)∫f^α dG_i − (1/(1+α))∫f^{1+α} − 1/α]`;
/// at α = 0 it is `Σ_i [∫ log f dG_i − 1]`.
pub fn q_alpha_functional<M: InhModel + ?Sized>(
    model: &M,
    spec: &TrueDistributionSpec,
    theta: &Parameter,
    alpha: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    spec.validate(Some(model.n_obs()))?;
    model.check_parameter(theta)?;
    let mut acc = CompensatedSum::new();
    for i in 0..model.n_obs() {
        let term = if alpha == 0.0 {
            expected_log_under(model, spec, i, theta)? - 1.0
        } else {
            let log_e = log_expected_power_under(model, spec, i, theta, alpha)?;
            let integral = model.log_integral_power(i, theta, alpha)?.exp();
            log_e.exp_m1() / alpha - integral / (1.0 + alpha)
        };
        acc.add(term);
    }
    Ok(acc.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Family, RegressionModel};
    use nalgebra::DMatrix;
    use std::f64::consts::PI;

    fn unit_linear() -> (RegressionModel, Dataset) {
        let z = DMatrix::from_element(1, 1, 1.0);
        let m = RegressionModel::new(Family::LinearKnownSigma { sigma: 1.0 }, z.clone()).unwrap();
        let d = Dataset::new(DVector::from_element(1, 0.0), z).unwrap();
        (m, d)
    }

    #[test]
    fn single_point_linear_value() {
        let (m, d) = unit_linear();
        let q = q_alpha(&m, &d, &Parameter::new(vec![0.0]), 1.0, Derivatives::None).unwrap();
        let c = (2.0 * PI).powf(-0.5);
        let expected = c - 0.5 * c / 2f64.sqrt() - 1.0;
        assert!((q.value - expected).abs() < 1e-14);
        assert!((q.value - (-0.742_105)).abs() < 1e-6);
    }

    #[test]
    fn logistic_symmetric_point() {
        let z = DMatrix::from_element(1, 1, 0.0);
        let m = RegressionModel::new(Family::Logistic, z.clone()).unwrap();
        let d = Dataset::new(DVector::from_element(1, 1.0), z).unwrap();
        for b in [-2.0, 0.0, 3.0] {
            let q = q_alpha(&m, &d, &Parameter::new(vec![b]), 1.0, Derivatives::None).unwrap();
            assert!((q.value + 0.75).abs() < 1e-15);
        }
    }

    #[test]
    fn alpha_zero_is_loglik_minus_n() {
        let z = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, -0.5]);
        let m = RegressionModel::new(Family::LinearKnownSigma { sigma: 0.7 }, z.clone()).unwrap();
        let d = Dataset::new(DVector::from_vec(vec![0.3, 1.1, -2.0]), z).unwrap();
        let theta = Parameter::new(vec![0.4]);
        let ll: f64 = (0..3)
            .map(|i| m.log_density(i, d.response(i), &theta).unwrap())
            .sum();
        let q0 = q_alpha(&m, &d, &theta, 0.0, Derivatives::None).unwrap().value;
        assert!((q0 - (ll - 3.0)).abs() < 1e-13);
        let qs = q_alpha(&m, &d, &theta, 1e-6, Derivatives::None).unwrap().value;
        assert!((qs - q0).abs() < 1e-4);
    }

    #[test]
    fn functional_in_model_value() {
        let (m, _) = unit_linear();
        let th = Parameter::new(vec![0.0]);
        let spec = TrueDistributionSpec::in_model(th.clone());
        let v = q_alpha_functional(&m, &spec, &th, 1.0).unwrap();
        let c = (2.0 * PI).powf(-0.5);
        assert!((v - (c / 2f64.sqrt() - c / (2.0 * 2f64.sqrt()) - 1.0)).abs() < 1e-14);
        assert!((v - (-0.858_953)).abs() < 1e-6);
        let zero = TrueDistributionSpec::contaminated(th.clone(), 0.0, vec![40.0]).unwrap();
        assert_eq!(q_alpha_functional(&m, &zero, &th, 1.0).unwrap(), v);
    }

    #[test]
    fn spec_validation() {
        let th = Parameter::new(vec![0.0]);
        assert!(TrueDistributionSpec::contaminated(th.clone(), 1.0, vec![0.0]).is_err());
        assert!(TrueDistributionSpec::contaminated(th.clone(), 0.2, vec![f64::NAN]).is_err());
        let (m, _) = unit_linear();
        let spec = TrueDistributionSpec::contaminated(th.clone(), 0.2, vec![0.0, 1.0]).unwrap();
        assert!(q_alpha_functional(&m, &spec, &th, 0.5).is_err());
    }
}
