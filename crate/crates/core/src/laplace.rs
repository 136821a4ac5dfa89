//! First-order Laplace approximation of R^(α)-posterior integrals.
//!
//! `log ∫ q(θ) exp(Q(θ)) dθ ≈ log q(θ̂) + Q(θ̂) + (p/2) log 2π − ½ log|−∇²Q(θ̂)|`
//! with θ̂ the maximizer of `Q`.

use nalgebra::DVector;

use crate::alpha_likelihood::{q_alpha, Derivatives};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mdpde::{fit, fit_unchecked, AlphaObjective, FitOptions};
use crate::model::{Dataset, InhModel, Parameter};
use crate::optim::{maximize, MaximizeOptions, SmoothObjective};
use crate::posterior::Prior;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceApproximation {
    /// Log of the approximated integral.
    pub integral_value: f64,
    pub mode: Parameter,
    pub neg_hessian_logdet: f64,
    pub q_at_mode: f64,
}

/// Laplace approximation at a known mode of `objective`, weighting by `exp(log_q)`.
pub fn laplace_at_mode<O: SmoothObjective + ?Sized>(
    objective: &O,
    mode: &DVector<f64>,
    log_q: f64,
) -> Result<LaplaceApproximation> {
    if !log_q.is_finite() {
        return Err(Error::Domain("q must be positive and finite at the mode".into()));
    }
    let (value, _, hess) = objective.value_gradient_hessian(mode)?;
    let neg = -hess;
    let logdet = linalg::spd_logdet(&neg).map_err(|_| Error::SingularHessian {
        min_eigenvalue: linalg::sym_eigenvalues(&neg).first().copied().unwrap_or(0.0),
    })?;
    let p = mode.len() as f64;
    Ok(LaplaceApproximation {
        integral_value: log_q + value + 0.5 * p * LN_2PI - 0.5 * logdet,
        mode: Parameter::from_vector(mode.clone()),
        neg_hessian_logdet: logdet,
        q_at_mode: value,
    })
}

/// Maximizes `objective` from `start` and applies [`laplace_at_mode`].
pub fn laplace_objective<O, Q>(objective: &O, start: &DVector<f64>, q_fn: Q) -> Result<LaplaceApproximation>
where
    O: SmoothObjective + ?Sized,
    Q: Fn(&DVector<f64>) -> f64,
{
    let r = maximize(objective, start, &MaximizeOptions::default())?;
    if !r.converged {
        return Err(Error::NonConvergence(format!(
            "mode search stopped with gradient norm {:.3e}",
            r.gradient_norm
        )));
    }
    let q = q_fn(&r.x);
    if !(q > 0.0) {
        return Err(Error::Domain(format!("q must be positive at the mode, got {q}")));
    }
    laplace_at_mode(objective, &r.x, q.ln())
}

/// Laplace approximation of `log ∫ q(θ) exp(Q_n^(α)(θ)) dθ` around the MDPDE.
pub fn laplace_integral<M, Q>(model: &M, data: &Dataset, q_fn: Q, alpha: f64) -> Result<LaplaceApproximation>
where
    M: InhModel + ?Sized,
    Q: Fn(&Parameter) -> f64,
{
    let r = fit(model, data, alpha, &FitOptions::default())?;
    if !r.converged {
        return Err(Error::NonConvergence(format!(
            "MDPDE stopped with gradient norm {:.3e}",
            r.gradient_norm
        )));
    }
    let q = q_fn(&r.theta_hat);
    if !(q > 0.0) {
        return Err(Error::Domain(format!("q must be positive at the mode, got {q}")));
    }
    let obj = AlphaObjective::new(model, data, alpha);
    laplace_at_mode(&obj, &r.theta_hat, q.ln())
}

/// First-order Laplace ratio for `E_{π_α}[h(θ)]`, which is `h(θ̂)`.
pub fn laplace_expectation<M, H>(model: &M, data: &Dataset, prior: &Prior, h: H, alpha: f64) -> Result<DVector<f64>>
where
    M: InhModel + ?Sized,
    H: Fn(&Parameter) -> DVector<f64>,
{
    if !prior.is_proper() {
        return Err(Error::Unsupported(
            "Laplace expectations need a proper prior".into(),
        ));
    }
    let den = laplace_integral(model, data, |t| prior.log_density(t).exp(), alpha)?;
    Ok(h(&den.mode))
}

/// Empirical diagnostics for the Laplace regularity conditions.
#[derive(Debug, Clone)]
pub struct BConditionsReport {
    pub theta_hat: Parameter,
    /// `det(−n⁻¹∇²Q(θ̂))`.
    pub b2_determinant: f64,
    pub b2_min_eigenvalue: f64,
    /// `(δ, sup_{‖θ−θ̂‖>δ} n⁻¹(Q(θ) − Q(θ̂)))` over the grid; `None` when no grid point is that far.
    pub b3_sup: Vec<(f64, Option<f64>)>,
    pub grid_points: usize,
    pub warnings: Vec<String>,
}

/// Relative eigenvalue level below which a direction is reported as flat.
pub const FLAT_DIRECTION_TOLERANCE: f64 = 1e-6;

/// Van der Corput radical inverse in `base`.
fn radical_inverse(mut k: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while k > 0 {
        out += (k % base) as f64 * f;
        k /= base;
        f *= inv;
    }
    out
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// `m` Halton points in `[0,1]^p` (skipping the origin).
pub fn halton(m: usize, p: usize) -> Result<Vec<DVector<f64>>> {
    if p > PRIMES.len() {
        return Err(Error::Unsupported(format!("Halton grid limited to {} dimensions", PRIMES.len())));
    }
    Ok((1..=m as u64)
        .map(|k| DVector::from_fn(p, |j, _| radical_inverse(k, PRIMES[j])))
        .collect())
}

/// Checks the curvature and separation conditions on a quasi-random grid.
///
/// The grid covers `region` (lower, upper corners) or by default `θ̂ ± 10`
/// asymptotic standard deviations (at least ±1) per coordinate.
pub fn check_b_conditions<M: InhModel + ?Sized>(
    model: &M,
    data: &Dataset,
    alpha: f64,
    delta_grid: &[f64],
    region: Option<(DVector<f64>, DVector<f64>)>,
    points: usize,
) -> Result<BConditionsReport> {
    let r = fit_unchecked(model, data, alpha, model.initial_guess(data), true, &FitOptions::default())?;
    let n = data.n() as f64;
    let p = model.dim();
    let scaled = &r.neg_hessian / n;
    let ev = linalg::sym_eigenvalues(&scaled);
    let b2_min_eigenvalue = ev.first().copied().unwrap_or(0.0);
    let b2_determinant = ev.iter().product();
    let mut warnings = Vec::new();
    let top = ev.last().copied().unwrap_or(0.0).abs();
    if !(b2_min_eigenvalue > FLAT_DIRECTION_TOLERANCE * top.max(1.0)) {
        warnings.push(format!(
            "flat direction: smallest eigenvalue of -Hessian/n is {b2_min_eigenvalue:.3e}"
        ));
    }
    if !r.converged {
        warnings.push(format!(
            "MDPDE did not converge (gradient norm {:.3e})",
            r.gradient_norm
        ));
    }
    let theta_hat = r.theta_hat.clone();
    let (lower, upper) = match region {
        Some(b) => b,
        None => {
            let sd = match linalg::spd_inverse(&r.neg_hessian) {
                Ok(inv) => inv.diagonal().map(|v| v.max(0.0).sqrt()),
                Err(_) => DVector::from_element(p, 1.0),
            };
            let half = sd.map(|s| (10.0 * s).max(1.0));
            (theta_hat.as_vector() - &half, theta_hat.as_vector() + &half)
        }
    };
    let q_hat = r.q_value;
    let mut sups: Vec<Option<f64>> = vec![None; delta_grid.len()];
    let mut used = 0;
    for u in halton(points, p)? {
        let theta = DVector::from_fn(p, |j, _| lower[j] + (upper[j] - lower[j]) * u[j]);
        let dist = (&theta - theta_hat.as_vector()).norm();
        let Ok(q) = q_alpha(model, data, &Parameter::from_vector(theta), alpha, Derivatives::None) else {
            continue;
        };
        used += 1;
        let v = (q.value - q_hat) / n;
        for (k, &delta) in delta_grid.iter().enumerate() {
            if dist > delta {
                sups[k] = Some(sups[k].map_or(v, |s: f64| s.max(v)));
            }
        }
    }
    for (k, s) in sups.iter().enumerate() {
        if let Some(s) = s {
            if *s >= 0.0 {
                warnings.push(format!(
                    "separation fails at delta {}: sup = {s:.3e}",
                    delta_grid[k]
                ));
            }
        }
    }
    Ok(BConditionsReport {
        theta_hat,
        b2_determinant,
        b2_min_eigenvalue,
        b3_sup: delta_grid.iter().copied().zip(sups).collect(),
        grid_points: used,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    struct Quadratic {
        a: DMatrix<f64>,
        mu: DVector<f64>,
        c: f64,
    }

    impl SmoothObjective for Quadratic {
        fn dim(&self) -> usize {
            self.mu.len()
        }
        fn value(&self, x: &DVector<f64>) -> Result<f64> {
            let d = x - &self.mu;
            Ok(self.c - 0.5 * (d.transpose() * &self.a * &d)[(0, 0)])
        }
        fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(-&self.a * (x - &self.mu))
        }
        fn hessian(&self, _: &DVector<f64>) -> Result<DMatrix<f64>> {
            Ok(-self.a.clone())
        }
    }

    #[test]
    fn exact_for_gaussian_integrand() {
        let obj = Quadratic {
            a: DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]),
            mu: DVector::from_vec(vec![1.0, -2.0]),
            c: 3.0,
        };
        let lap = laplace_objective(&obj, &DVector::zeros(2), |_| 2.0).unwrap();
        let exact = 2f64.ln() + 3.0 + LN_2PI - 0.5 * obj.a.determinant().ln();
        assert!((lap.integral_value - exact).abs() < 1e-12);
        assert!((lap.mode.as_vector() - &obj.mu).amax() < 1e-12);

        // Shifting Q by c multiplies the integral by e^c.
        let shifted = Quadratic { c: 3.0 + 17.5, ..obj };
        let lap2 = laplace_objective(&shifted, &DVector::zeros(2), |_| 2.0).unwrap();
        assert!((lap2.integral_value - 17.5 - lap.integral_value).abs() < 1e-12);
    }

    #[test]
    fn halton_first_points() {
        let h = halton(3, 2).unwrap();
        assert_eq!(h[0][0], 0.5);
        assert!((h[1][1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(h[2][0], 0.75);
    }
}
