//! Closed-form efficiencies of the expected-posterior estimator and
//! empirical checks of its asymptotic behaviour.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::laplace::laplace_expectation;
use crate::linalg;
use crate::model::{zeta, Family, Parameter, RegressionModel};
use crate::numeric::{normal_cdf, sample_covariance, sample_mean};
use crate::posterior::{erpe, rng_for, sample, Prior, SamplerConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyReport {
    pub alpha: f64,
    pub zeta_alpha: f64,
    /// Asymptotic variance factor of β̂ relative to σ².
    pub upsilon_beta: f64,
    /// Asymptotic variance of σ̂ relative to σ².
    pub upsilon_sigma: f64,
    pub are_beta_percent: f64,
    pub are_sigma_percent: f64,
}

/// Closed-form efficiencies for the normal linear model.
pub fn efficiency(alpha: f64, sigma: f64) -> Result<EfficiencyReport> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("alpha must be non-negative, got {alpha}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    let a2 = alpha * alpha;
    let r = 1.0 + a2 / (1.0 + 2.0 * alpha);
    let upsilon_beta = r.powf(1.5);
    let upsilon_sigma =
        (2.0 * (1.0 + 2.0 * a2) * r.powf(2.5) - a2 * (1.0 + alpha).powi(2)) / (2.0 + a2).powi(2);
    Ok(EfficiencyReport {
        alpha,
        zeta_alpha: zeta(alpha, sigma),
        upsilon_beta,
        upsilon_sigma,
        are_beta_percent: 100.0 / upsilon_beta,
        are_sigma_percent: 100.0 * 0.5 / upsilon_sigma,
    })
}

/// The α grid of the published efficiency table.
pub const TABLE_ALPHAS: [f64; 10] = [0.0, 0.01, 0.02, 0.05, 0.10, 0.15, 0.25, 0.50, 0.75, 1.00];
/// Published ARE (%) of β̂ on [`TABLE_ALPHAS`].
pub const TABLE_ARE_BETA: [f64; 10] = [100.0, 99.99, 99.94, 99.66, 98.76, 97.46, 94.06, 83.81, 73.76, 64.95];
/// Published ARE (%) of σ̂ on [`TABLE_ALPHAS`].
pub const TABLE_ARE_SIGMA: [f64; 10] = [100.0, 99.97, 99.88, 99.32, 97.56, 95.05, 88.84, 73.06, 61.53, 54.11];

pub fn are_table(alphas: &[f64]) -> Result<Vec<EfficiencyReport>> {
    if alphas.is_empty() {
        return Err(Error::InvalidConfig("no alpha values given".into()));
    }
    alphas.iter().map(|&a| efficiency(a, 1.0)).collect()
}

/// Which curvature matrix standardizes the draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BvmScaling {
    PsiAtThetaG,
    PsiHatAtThetaHat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvmReport {
    pub n: usize,
    pub alpha: f64,
    pub tv_estimate: f64,
    pub scaling_used: BvmScaling,
    /// Per-coordinate binned distances in standardized coordinates.
    pub marginal_tv: Vec<f64>,
    /// True when `tv_estimate` combines marginals (p > 1).
    pub product_approximation: bool,
}

/// Minimum number of draws for the binned distance.
pub const MIN_BVM_DRAWS: usize = 1000;

fn quantile_sorted(x: &[f64], q: f64) -> f64 {
    let pos = q * (x.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    x[lo] + (x[hi] - x[lo]) * (pos - lo as f64)
}

/// Binned total-variation distance between a sample and N(0,1), with
/// Freedman–Diaconis bins spanning the sample range plus the normal tails.
pub fn binned_tv_standard_normal(sample: &[f64]) -> Result<f64> {
    let m = sample.len();
    if m < MIN_BVM_DRAWS {
        return Err(Error::InsufficientSample {
            got: m,
            need: MIN_BVM_DRAWS,
        });
    }
    let mut x = sample.to_vec();
    x.sort_by(|a, b| a.total_cmp(b));
    let (lo, hi) = (x[0], x[m - 1]);
    let iqr = quantile_sorted(&x, 0.75) - quantile_sorted(&x, 0.25);
    let mut width = 2.0 * iqr / (m as f64).cbrt();
    if !(width > 0.0) {
        width = ((hi - lo) / 10.0).max(1e-3);
    }
    let bins = (((hi - lo) / width).ceil() as usize).clamp(1, 100_000);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { width };
    let mut counts = vec![0usize; bins];
    for &v in &x {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let mut l1 = normal_cdf(lo) + (1.0 - normal_cdf(lo + width * bins as f64));
    for (k, &c) in counts.iter().enumerate() {
        let a = lo + width * k as f64;
        let prob = normal_cdf(a + width) - normal_cdf(a);
        l1 += (c as f64 / m as f64 - prob).abs();
    }
    Ok((0.5 * l1).clamp(0.0, 1.0))
}

/// Distance between the law of `√n(θ − θ̂)` under the chain and `N(0, Ψ⁻¹)`.
pub fn bvm_distance(
    draws: &DMatrix<f64>,
    theta_hat: &Parameter,
    psi: &DMatrix<f64>,
    n: usize,
    alpha: f64,
    scaling: BvmScaling,
) -> Result<BvmReport> {
    let (m, p) = draws.shape();
    if m < MIN_BVM_DRAWS {
        return Err(Error::InsufficientSample {
            got: m,
            need: MIN_BVM_DRAWS,
        });
    }
    if p != theta_hat.len() || psi.shape() != (p, p) {
        return Err(Error::Dimension("chain, mode and Ψ disagree".into()));
    }
    // If Ψ = LLᵀ then Lᵀt ~ N(0, I) under the limit.
    let lt = linalg::cholesky(psi)?.l().transpose();
    let root_n = (n as f64).sqrt();
    let mut cols = vec![Vec::with_capacity(m); p];
    for r in 0..m {
        let t = (draws.row(r).transpose() - theta_hat.as_vector()) * root_n;
        let u = &lt * t;
        for j in 0..p {
            cols[j].push(u[j]);
        }
    }
    let marginal_tv = cols
        .iter()
        .map(|c| binned_tv_standard_normal(c))
        .collect::<Result<Vec<_>>>()?;
    let tv = if p == 1 {
        marginal_tv[0]
    } else {
        1.0 - marginal_tv.iter().map(|v| 1.0 - v).product::<f64>()
    };
    Ok(BvmReport {
        n,
        alpha,
        tv_estimate: tv.clamp(0.0, 1.0),
        scaling_used: scaling,
        marginal_tv,
        product_approximation: p > 1,
    })
}

/// Anderson–Darling statistic of `x` against N(0,1) (raw, no p-value).
pub fn anderson_darling(x: &[f64]) -> f64 {
    let m = x.len();
    if m == 0 {
        return f64::NAN;
    }
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let mut acc = 0.0;
    for k in 0..m {
        let lo = normal_cdf(s[k]).max(1e-300).ln();
        let hi = (1.0 - normal_cdf(s[m - 1 - k])).max(1e-300).ln();
        acc += (2 * k + 1) as f64 * (lo + hi);
    }
    -(m as f64) - acc / m as f64
}

/// How each replication turns a dataset into an estimate.
#[derive(Debug, Clone)]
pub enum ErpeMethod {
    Mcmc(SamplerConfig),
    Laplace,
}

#[derive(Debug, Clone)]
pub struct ErpeMonteCarloConfig {
    pub family: Family,
    pub design: DMatrix<f64>,
    pub theta_g: Parameter,
    pub alpha: f64,
    pub prior: Prior,
    pub method: ErpeMethod,
    pub replications: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ErpeMonteCarloReport {
    pub replications: usize,
    pub failures: usize,
    /// Covariance of `(ZᵀZ)^{1/2}(β̂ − β^g)` over replications (centered at its mean).
    pub standardized_covariance: DMatrix<f64>,
    pub mean_standardized_error: DVector<f64>,
    /// `n · Var(σ̂)` for the unknown-scale model.
    pub scaled_sigma_variance: Option<f64>,
    /// Anderson–Darling statistics of the standardized β coordinates.
    pub anderson_darling: Vec<f64>,
    /// Theoretical `υ_α^(β)` (including σ²).
    pub upsilon_beta: f64,
    /// Theoretical `υ_α^(σ)` (including σ²) when σ is estimated.
    pub upsilon_sigma: Option<f64>,
    /// `‖C − υ I‖_F / ‖υ I‖_F` for the standardized covariance `C`.
    pub relative_frobenius_error: f64,
}

/// Minimum replications for [`monte_carlo_erpe_distribution`].
pub const MIN_REPLICATIONS: usize = 100;

/// Replicates data generation and ERPE computation under the model at `theta_g`.
pub fn monte_carlo_erpe_distribution(config: &ErpeMonteCarloConfig) -> Result<ErpeMonteCarloReport> {
    if config.replications < MIN_REPLICATIONS {
        return Err(Error::InsufficientSample {
            got: config.replications,
            need: MIN_REPLICATIONS,
        });
    }
    let model = RegressionModel::new(config.family, config.design.clone())?;
    let p = config.design.ncols();
    let n = config.design.nrows();
    let sigma = match config.family {
        Family::LinearKnownSigma { sigma } => sigma,
        Family::LinearUnknownSigma => config.theta_g[p],
        Family::Logistic => {
            return Err(Error::Unsupported(
                "efficiency targets exist only for the linear families".into(),
            ))
        }
    };
    let eff = efficiency(config.alpha, sigma)?;
    let s2 = sigma * sigma;

    let run = |rep: usize| -> Result<Parameter> {
        // Offset stream, so a design drawn from the same seed never reappears as errors.
        let mut rng = rng_for(config.seed, (2u64 << 32) + rep as u64);
        let data = model.simulate(&config.theta_g, &mut rng)?;
        match &config.method {
            ErpeMethod::Mcmc(sc) => {
                let mut sc = sc.clone();
                sc.seed = config.seed;
                sc.stream = (1u64 << 32) + rep as u64;
                let chain = sample(&model, &data, &config.prior, config.alpha, &sc)?;
                Ok(erpe(&chain)?.estimate)
            }
            ErpeMethod::Laplace => Ok(Parameter::from_vector(laplace_expectation(
                &model,
                &data,
                &config.prior,
                |t| t.as_vector().clone(),
                config.alpha,
            )?)),
        }
    };
    let results: Vec<Result<Parameter>> = (0..config.replications).into_par_iter().map(run).collect();
    let ok: Vec<Parameter> = results.into_iter().filter_map(|r| r.ok()).collect();
    let failures = config.replications - ok.len();
    if ok.len() < 2 {
        return Err(Error::InsufficientSample {
            got: ok.len(),
            need: 2,
        });
    }
    let root = linalg::sym_sqrt(&(config.design.transpose() * &config.design));
    let beta_g = config.theta_g.rows(0, p).into_owned();
    let standardized = DMatrix::from_fn(ok.len(), p, |r, j| {
        let d = ok[r].rows(0, p) - &beta_g;
        (&root * d)[j]
    });
    let cov = sample_covariance(&standardized);
    let mean = sample_mean(&standardized);
    let target = DMatrix::identity(p, p) * (eff.upsilon_beta * s2);
    let relative_frobenius_error = linalg::frobenius(&(&cov - &target)) / linalg::frobenius(&target);
    let anderson_darling = (0..p)
        .map(|j| {
            let sd = cov[(j, j)].sqrt();
            let col: Vec<f64> = standardized.column(j).iter().map(|v| (v - mean[j]) / sd).collect();
            anderson_darling(&col)
        })
        .collect();
    let (scaled_sigma_variance, upsilon_sigma) = match config.family {
        Family::LinearUnknownSigma => {
            let s = DMatrix::from_fn(ok.len(), 1, |r, _| ok[r][p]);
            (Some(n as f64 * sample_covariance(&s)[(0, 0)]), Some(eff.upsilon_sigma * s2))
        }
        _ => (None, None),
    };
    Ok(ErpeMonteCarloReport {
        replications: ok.len(),
        failures,
        standardized_covariance: cov,
        mean_standardized_error: mean,
        scaled_sigma_variance,
        anderson_darling,
        upsilon_beta: eff.upsilon_beta * s2,
        upsilon_sigma,
        relative_frobenius_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::standard_normals;

    #[test]
    fn identity_at_zero() {
        let e = efficiency(0.0, 2.0).unwrap();
        assert_eq!(e.are_beta_percent, 100.0);
        assert_eq!(e.are_sigma_percent, 100.0);
    }

    #[test]
    fn upsilon_matches_zeta_ratio() {
        for k in 0..=200 {
            let a = k as f64 * 0.01;
            let e = efficiency(a, 1.0).unwrap();
            let ratio = zeta(2.0 * a, 1.0) / zeta(a, 1.0).powi(2);
            assert!((e.upsilon_beta - ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(efficiency(-0.1, 1.0).is_err());
        assert!(efficiency(0.1, 0.0).is_err());
        assert!(are_table(&[]).is_err());
    }

    #[test]
    fn exact_normal_draws_are_close() {
        let z = standard_normals(50_000, 1, 11);
        let tv = binned_tv_standard_normal(z.column(0).as_slice()).unwrap();
        assert!(tv < 0.03, "{tv}");
        let shifted: Vec<f64> = z.column(0).iter().map(|v| v + 1.0).collect();
        assert!(binned_tv_standard_normal(&shifted).unwrap() > 0.3);
        assert!(binned_tv_standard_normal(&shifted[..10]).is_err());
    }

    #[test]
    fn anderson_darling_small_for_normal() {
        let z = standard_normals(2000, 1, 3);
        assert!(anderson_darling(z.column(0).as_slice()) < 3.0);
        let u: Vec<f64> = z.column(0).iter().map(|v| v * 2.0).collect();
        assert!(anderson_darling(&u) > 10.0);
    }
}
