//! The R^(α)-posterior `π(θ) exp(Q_n^(α)(θ))`: evaluation, random-walk
//! Metropolis sampling, expected-posterior and loss-based estimates, and
//! self-normalized importance sampling.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::alpha_likelihood::{q_alpha, q_alpha_functional, Derivatives, TrueDistributionSpec};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mdpde::{fit, FitOptions};
use crate::model::{Dataset, InhModel, Parameter};
use crate::numeric::{log_sum_exp, CompensatedSum};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Prior density on θ.
#[derive(Debug, Clone)]
pub enum Prior {
    Gaussian {
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
        precision: DMatrix<f64>,
        cholesky_l: DMatrix<f64>,
        log_norm: f64,
    },
    UniformBox {
        lower: DVector<f64>,
        upper: DVector<f64>,
    },
    ImproperFlat,
}

impl Prior {
    pub fn gaussian(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::Dimension("prior mean and covariance disagree".into()));
        }
        if linalg::max_asymmetry(&covariance) > 1e-10 * covariance.amax().max(1.0) {
            return Err(Error::Domain("prior covariance is not symmetric".into()));
        }
        let chol = linalg::cholesky(&covariance)
            .map_err(|_| Error::Domain("prior covariance is not positive definite".into()))?;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let log_norm = -0.5 * (mean.len() as f64 * LN_2PI + logdet);
        Ok(Self::Gaussian {
            precision: chol.inverse(),
            cholesky_l: chol.l(),
            mean,
            covariance,
            log_norm,
        })
    }

    /// Independent `N(mean_j, sd²)` coordinates.
    pub fn isotropic(mean: DVector<f64>, sd: f64) -> Result<Self> {
        let p = mean.len();
        Self::gaussian(mean, DMatrix::identity(p, p) * (sd * sd))
    }

    pub fn uniform_box(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension("box bounds have different lengths".into()));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l < u)) {
            return Err(Error::Domain("box requires lower < upper componentwise".into()));
        }
        Ok(Self::UniformBox { lower, upper })
    }

    pub fn is_proper(&self) -> bool {
        !matches!(self, Self::ImproperFlat)
    }

    /// Log density; normalized for Gaussian and box priors, zero for the flat prior.
    pub fn log_density(&self, theta: &DVector<f64>) -> f64 {
        match self {
            Self::Gaussian {
                mean,
                precision,
                log_norm,
                ..
            } => {
                if theta.len() != mean.len() {
                    return f64::NAN;
                }
                let d = theta - mean;
                log_norm - 0.5 * (d.transpose() * precision * &d)[(0, 0)]
            }
            Self::UniformBox { lower, upper } => {
                let inside = theta
                    .iter()
                    .zip(lower.iter().zip(upper.iter()))
                    .all(|(t, (l, u))| t >= l && t <= u);
                if inside && theta.len() == lower.len() {
                    -lower
                        .iter()
                        .zip(upper.iter())
                        .map(|(l, u)| (u - l).ln())
                        .sum::<f64>()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Self::ImproperFlat => 0.0,
        }
    }

    /// Hessian of the log density (zero for box and flat priors).
    pub fn log_density_hessian(&self, p: usize) -> DMatrix<f64> {
        match self {
            Self::Gaussian { precision, .. } => -precision.clone(),
            _ => DMatrix::zeros(p, p),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Parameter> {
        match self {
            Self::Gaussian {
                mean, cholesky_l, ..
            } => {
                let z = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
                Ok(Parameter::from_vector(mean + cholesky_l * z))
            }
            Self::UniformBox { lower, upper } => Ok(Parameter::from_vector(DVector::from_fn(
                lower.len(),
                |j, _| lower[j] + (upper[j] - lower[j]) * rng.random::<f64>(),
            ))),
            Self::ImproperFlat => Err(Error::Unsupported("cannot sample a flat prior".into())),
        }
    }
}

/// Scalar loss `L(θ, t)` with derivatives in the decision `t`.
pub trait Loss: Sync {
    fn evaluate(&self, theta: f64, t: f64) -> f64;
    fn d1(&self, theta: f64, t: f64) -> f64;
    fn d2(&self, theta: f64, t: f64) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredError;

impl Loss for SquaredError {
    fn evaluate(&self, theta: f64, t: f64) -> f64 {
        (t - theta) * (t - theta)
    }
    fn d1(&self, theta: f64, t: f64) -> f64 {
        2.0 * (t - theta)
    }
    fn d2(&self, _: f64, _: f64) -> f64 {
        2.0
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AbsoluteError;

impl Loss for AbsoluteError {
    fn evaluate(&self, theta: f64, t: f64) -> f64 {
        (t - theta).abs()
    }
    fn d1(&self, theta: f64, t: f64) -> f64 {
        if t > theta {
            1.0
        } else if t < theta {
            -1.0
        } else {
            0.0
        }
    }
    fn d2(&self, _: f64, _: f64) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Huber {
    pub delta: f64,
}

impl Loss for Huber {
    fn evaluate(&self, theta: f64, t: f64) -> f64 {
        let r = (t - theta).abs();
        if r <= self.delta {
            0.5 * r * r
        } else {
            self.delta * (r - 0.5 * self.delta)
        }
    }
    fn d1(&self, theta: f64, t: f64) -> f64 {
        (t - theta).clamp(-self.delta, self.delta)
    }
    fn d2(&self, theta: f64, t: f64) -> f64 {
        if (t - theta).abs() <= self.delta {
            1.0
        } else {
            0.0
        }
    }
}

/// `sqrt((t−θ)² + ε²) − ε`, a twice-differentiable surrogate of absolute error.
#[derive(Debug, Clone, Copy)]
pub struct SmoothAbsolute {
    pub eps: f64,
}

impl Loss for SmoothAbsolute {
    fn evaluate(&self, theta: f64, t: f64) -> f64 {
        let r = t - theta;
        (r * r + self.eps * self.eps).sqrt() - self.eps
    }
    fn d1(&self, theta: f64, t: f64) -> f64 {
        let r = t - theta;
        r / (r * r + self.eps * self.eps).sqrt()
    }
    fn d2(&self, theta: f64, t: f64) -> f64 {
        let r = t - theta;
        let s = r * r + self.eps * self.eps;
        self.eps * self.eps / (s * s.sqrt())
    }
}

/// Posterior target: observed data or a population distribution.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Data(&'a Dataset),
    Functional(&'a TrueDistributionSpec),
}

/// `Q_n^(α)(θ) + log π(θ)`; `−∞` outside the prior support.
pub fn log_r_posterior_unnorm<M: InhModel + ?Sized>(
    model: &M,
    data: &Dataset,
    prior: &Prior,
    theta: &Parameter,
    alpha: f64,
) -> Result<f64> {
    log_target(model, Target::Data(data), prior, theta, alpha)
}

/// Unnormalized log R^(α)-posterior for either kind of target.
pub fn log_target<M: InhModel + ?Sized>(
    model: &M,
    target: Target<'_>,
    prior: &Prior,
    theta: &Parameter,
    alpha: f64,
) -> Result<f64> {
    model.check_parameter(theta)?;
    let lp = prior.log_density(theta);
    if lp == f64::NEG_INFINITY {
        return Ok(lp);
    }
    let q = match target {
        Target::Data(d) => q_alpha(model, d, theta, alpha, Derivatives::None)?.value,
        Target::Functional(spec) => q_alpha_functional(model, spec, theta, alpha)?,
    };
    Ok(q + lp)
}

/// Proposal covariance for the random-walk sampler.
#[derive(Debug, Clone)]
pub enum Proposal {
    /// `2.38²/p · (−∇²Q(θ̂))⁻¹` at the starting point.
    Auto,
    /// The automatic covariance multiplied by `scale²`.
    Scaled(f64),
    Covariance(DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    /// Post-burn-in iterations.
    pub chain_length: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    /// RNG stream, so replications can share a seed.
    pub stream: u64,
    pub proposal: Proposal,
    /// Starting point; the MDPDE when absent.
    pub start: Option<Parameter>,
}

impl SamplerConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            chain_length: 50_000,
            burn_in: 5_000,
            thinning: 1,
            seed,
            stream: 0,
            proposal: Proposal::Auto,
            start: None,
        }
    }
}

/// Post-burn-in draws from the R^(α)-posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaPosteriorChain {
    pub draws: DMatrix<f64>,
    pub log_post_values: DVector<f64>,
    pub acceptance_rate: f64,
    pub seed: u64,
    pub alpha: f64,
    pub burn_in: usize,
    pub thinning: usize,
    pub warnings: Vec<String>,
}

impl AlphaPosteriorChain {
    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.draws.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.column(j).iter().copied().collect()
    }

    /// One row per draw: `iteration, theta1..thetap, log_post`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["draw".to_string()];
        header.extend((1..=self.dim()).map(|j| format!("theta{j}")));
        header.push("log_post".into());
        w.write_record(&header)?;
        for r in 0..self.len() {
            let mut rec = vec![r.to_string()];
            rec.extend(self.draws.row(r).iter().map(|v| format!("{v}")));
            rec.push(format!("{}", self.log_post_values[r]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Random-walk Metropolis on the R^(α)-posterior for observed data.
pub fn sample<M: InhModel + ?Sized>(
    model: &M,
    data: &Dataset,
    prior: &Prior,
    alpha: f64,
    config: &SamplerConfig,
) -> Result<AlphaPosteriorChain> {
    if config.thinning == 0 || config.chain_length == 0 {
        return Err(Error::InvalidConfig(
            "chain length and thinning must be positive".into(),
        ));
    }
    let p = model.dim();
    let (start, neg_h) = match &config.start {
        Some(s) => {
            model.check_parameter(s)?;
            let q = q_alpha(model, data, s, alpha, Derivatives::Hessian)?;
            (s.clone(), -q.hessian.unwrap())
        }
        None => {
            let r = fit(model, data, alpha, &FitOptions::default())
                .map_err(|e| Error::NoStartingPoint(format!("MDPDE failed: {e}")))?;
            (r.theta_hat, r.neg_hessian)
        }
    };
    let cov = match &config.proposal {
        Proposal::Covariance(c) => c.clone(),
        Proposal::Auto | Proposal::Scaled(_) => {
            let inv = linalg::spd_inverse(&neg_h).map_err(|_| Error::SingularHessian {
                min_eigenvalue: linalg::sym_eigenvalues(&neg_h)[0],
            })?;
            let s = match config.proposal {
                Proposal::Scaled(s) => s * s,
                _ => 1.0,
            };
            inv * (2.38 * 2.38 / p as f64 * s)
        }
    };
    if cov.nrows() != p || cov.ncols() != p {
        return Err(Error::Dimension("proposal covariance has wrong shape".into()));
    }
    let l = linalg::cholesky(&cov)?.l();

    let eval = |x: &DVector<f64>| -> f64 {
        log_r_posterior_unnorm(model, data, prior, &Parameter::from_vector(x.clone()), alpha)
            .ok()
            .filter(|v| !v.is_nan())
            .unwrap_or(f64::NEG_INFINITY)
    };
    let mut x = start.into_vector();
    let mut lp = eval(&x);
    if !lp.is_finite() {
        return Err(Error::NoStartingPoint(
            "log posterior is not finite at the starting point".into(),
        ));
    }
    let mut rng = rng_for(config.seed, config.stream);
    let kept = config.chain_length / config.thinning;
    let mut draws = DMatrix::zeros(kept.max(1), p);
    let mut values = DVector::zeros(kept.max(1));
    let mut accepted = 0usize;
    let mut row = 0;
    let total = config.burn_in + config.chain_length;
    for it in 0..total {
        let z = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let prop = &x + &l * z;
        let lp_new = eval(&prop);
        let u: f64 = rng.random();
        if lp_new > f64::NEG_INFINITY && u.ln() < lp_new - lp {
            x = prop;
            lp = lp_new;
            if it >= config.burn_in {
                accepted += 1;
            }
        }
        if it >= config.burn_in {
            let k = it - config.burn_in;
            if (k + 1) % config.thinning == 0 && row < kept {
                draws.row_mut(row).copy_from(&x.transpose());
                values[row] = lp;
                row += 1;
            }
        }
    }
    if kept == 0 {
        draws.row_mut(0).copy_from(&x.transpose());
        values[0] = lp;
    }
    let acceptance_rate = accepted as f64 / config.chain_length as f64;
    let mut warnings = Vec::new();
    if !(0.05..=0.7).contains(&acceptance_rate) {
        warnings.push(format!(
            "acceptance rate {acceptance_rate:.3} outside [0.05, 0.7]"
        ));
    }
    Ok(AlphaPosteriorChain {
        draws,
        log_post_values: values,
        acceptance_rate,
        seed: config.seed,
        alpha,
        burn_in: config.burn_in,
        thinning: config.thinning,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErpeEstimate {
    pub estimate: Parameter,
    /// Batch-means Monte Carlo standard errors.
    pub mc_se: DVector<f64>,
}

/// Batch-means standard error of the mean of `x`.
pub fn batch_means_se(x: &[f64]) -> f64 {
    let m = x.len();
    if m < 2 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / m as f64;
    let b = (m as f64).sqrt().floor() as usize;
    let a = m / b;
    if a < 2 {
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        return (var / m as f64).sqrt();
    }
    let used = a * b;
    let grand = x[..used].iter().sum::<f64>() / used as f64;
    let ss: f64 = (0..a)
        .map(|k| {
            let bm = x[k * b..(k + 1) * b].iter().sum::<f64>() / b as f64;
            (bm - grand).powi(2)
        })
        .sum();
    let var_bm = b as f64 * ss / (a - 1) as f64;
    (var_bm / m as f64).sqrt()
}

/// Expected R^(α)-posterior estimate: the chain mean with batch-means errors.
pub fn erpe(chain: &AlphaPosteriorChain) -> Result<ErpeEstimate> {
    if chain.is_empty() {
        return Err(Error::InsufficientSample { got: 0, need: 1 });
    }
    let p = chain.dim();
    let mut est = DVector::zeros(p);
    let mut se = DVector::zeros(p);
    for j in 0..p {
        let col = chain.column(j);
        let mut acc = CompensatedSum::new();
        acc.extend(col.iter().copied());
        est[j] = acc.value() / col.len() as f64;
        se[j] = batch_means_se(&col);
    }
    Ok(ErpeEstimate {
        estimate: Parameter::from_vector(est),
        mc_se: se,
    })
}

/// Minimizer over t of the weighted average of `L(θ_j, t)`.
///
/// Newton on the first-order condition, safeguarded by bisection on a
/// bracket where the averaged `L'` changes sign. Works for losses with
/// zero curvature (absolute error converges to a median).
pub fn weighted_loss_minimizer<L: Loss + ?Sized>(
    values: &[f64],
    weights: Option<&[f64]>,
    loss: &L,
    start: f64,
) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientSample { got: 0, need: 1 });
    }
    let w = |k: usize| weights.map(|w| w[k]).unwrap_or(1.0);
    let total: f64 = (0..values.len()).map(w).sum();
    let mean_d = |t: f64| -> (f64, f64) {
        let mut a = CompensatedSum::new();
        let mut b = CompensatedSum::new();
        for (k, &th) in values.iter().enumerate() {
            a.add(w(k) * loss.d1(th, t));
            b.add(w(k) * loss.d2(th, t));
        }
        (a.value() / total, b.value() / total)
    };
    let mut lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(lo);
    }
    let scale = (hi - lo).max(lo.abs().max(hi.abs()));
    let mut t = start.clamp(lo, hi);
    let mut trace = Vec::new();
    for _ in 0..400 {
        let (g, h) = mean_d(t);
        trace.push(t);
        if g == 0.0 {
            return Ok(t);
        }
        if g > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        if hi - lo <= 1e-13 * scale {
            return Ok(0.5 * (lo + hi));
        }
        let newton = if h > 0.0 { t - g / h } else { f64::NAN };
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - t).abs() <= 1e-14 * scale {
            return Ok(next);
        }
        t = next;
    }
    let tail: Vec<String> = trace.iter().rev().take(5).map(|v| format!("{v:.6e}")).collect();
    Err(Error::NonConvergence(format!(
        "loss minimization did not converge; last iterates {}",
        tail.join(", ")
    )))
}

/// R^(α)-Bayes estimate of coordinate `component` under `loss`.
pub fn bayes_estimate_under_loss<L: Loss + ?Sized>(
    chain: &AlphaPosteriorChain,
    component: usize,
    loss: &L,
) -> Result<f64> {
    if component >= chain.dim() {
        return Err(Error::Index {
            index: component,
            len: chain.dim(),
        });
    }
    let col = chain.column(component);
    let mean = erpe(chain)?.estimate[component];
    weighted_loss_minimizer(&col, None, loss, mean)
}

/// Gaussian importance proposal.
#[derive(Debug, Clone)]
pub struct GaussianProposal {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Self-normalized importance sample from the R^(α)-posterior.
#[derive(Debug, Clone)]
pub struct WeightedSample {
    pub draws: Vec<Parameter>,
    /// Normalized weights summing to one.
    pub weights: Vec<f64>,
    pub ess: f64,
    /// Log of the average unnormalized weight (log evidence estimate).
    pub log_mean_weight: f64,
}

impl WeightedSample {
    /// Weighted mean of `h` with delta-method standard errors.
    pub fn expectation<H>(&self, h: H) -> Result<(DVector<f64>, DVector<f64>)>
    where
        H: Fn(&Parameter) -> Result<DVector<f64>>,
    {
        let values = self.draws.iter().map(&h).collect::<Result<Vec<_>>>()?;
        Ok(self.expectation_of(&values))
    }

    pub fn expectation_of(&self, values: &[DVector<f64>]) -> (DVector<f64>, DVector<f64>) {
        let d = values.first().map(|v| v.len()).unwrap_or(0);
        let mut mean = DVector::zeros(d);
        for j in 0..d {
            let mut acc = CompensatedSum::new();
            for (w, v) in self.weights.iter().zip(values) {
                acc.add(w * v[j]);
            }
            mean[j] = acc.value();
        }
        let mut se = DVector::zeros(d);
        for j in 0..d {
            let mut acc = CompensatedSum::new();
            for (w, v) in self.weights.iter().zip(values) {
                acc.add(w * w * (v[j] - mean[j]).powi(2));
            }
            se[j] = acc.value().sqrt();
        }
        (mean, se)
    }
}

/// Minimum importance sample size.
pub const MIN_IMPORTANCE_DRAWS: usize = 1000;
/// Effective sample size below which weights are considered degenerate.
pub const MIN_EFFECTIVE_SAMPLE: f64 = 50.0;

/// Standard-normal matrix (`m × p`) from a seed, reusable as common random numbers.
pub fn standard_normals(m: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_for(seed, 0);
    let mut z = DMatrix::zeros(m, p);
    for r in 0..m {
        for c in 0..p {
            z[(r, c)] = StandardNormal.sample(&mut rng);
        }
    }
    z
}

/// Importance sample using caller-supplied standard normals `z` (rows are draws).
pub fn importance_sample_from_normals<M: InhModel + ?Sized>(
    model: &M,
    target: Target<'_>,
    prior: &Prior,
    alpha: f64,
    proposal: &GaussianProposal,
    z: &DMatrix<f64>,
) -> Result<WeightedSample> {
    let m = z.nrows();
    let p = proposal.mean.len();
    if m < MIN_IMPORTANCE_DRAWS {
        return Err(Error::InsufficientSample {
            got: m,
            need: MIN_IMPORTANCE_DRAWS,
        });
    }
    if z.ncols() != p || model.dim() != p {
        return Err(Error::Dimension("proposal dimension mismatch".into()));
    }
    let chol = linalg::cholesky(&proposal.covariance)?;
    let l = chol.l();
    let mut draws = Vec::with_capacity(m);
    let mut logw = Vec::with_capacity(m);
    for r in 0..m {
        let zr = z.row(r).transpose();
        let theta = Parameter::from_vector(&proposal.mean + &l * &zr);
        // Proposal log density up to the constant shared by all draws.
        let lq = -0.5 * zr.norm_squared();
        let lt = log_target(model, target, prior, &theta, alpha)
            .ok()
            .filter(|v| !v.is_nan())
            .unwrap_or(f64::NEG_INFINITY);
        logw.push(lt - lq);
        draws.push(theta);
    }
    let lse = log_sum_exp(&logw);
    if !lse.is_finite() {
        return Err(Error::DegenerateWeights {
            ess: 0.0,
            threshold: MIN_EFFECTIVE_SAMPLE,
        });
    }
    let weights: Vec<f64> = logw.iter().map(|v| (v - lse).exp()).collect();
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    if ess < MIN_EFFECTIVE_SAMPLE {
        return Err(Error::DegenerateWeights {
            ess,
            threshold: MIN_EFFECTIVE_SAMPLE,
        });
    }
    let logdet = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_mean_weight = lse - (m as f64).ln() + 0.5 * logdet + 0.5 * p as f64 * LN_2PI;
    Ok(WeightedSample {
        draws,
        weights,
        ess,
        log_mean_weight,
    })
}

#[derive(Debug, Clone)]
pub struct ImportanceEstimate {
    pub estimate: DVector<f64>,
    pub std_error: DVector<f64>,
    pub ess: f64,
}

/// Self-normalized importance-sampling estimate of `E_{π_α}[h(θ)]`.
#[allow(clippy::too_many_arguments)]
pub fn importance_expectation<M, H>(
    model: &M,
    target: Target<'_>,
    prior: &Prior,
    alpha: f64,
    h: H,
    proposal: &GaussianProposal,
    m: usize,
    seed: u64,
) -> Result<ImportanceEstimate>
where
    M: InhModel + ?Sized,
    H: Fn(&Parameter) -> Result<DVector<f64>>,
{
    let z = standard_normals(m, proposal.mean.len(), seed);
    let ws = importance_sample_from_normals(model, target, prior, alpha, proposal, &z)?;
    let (estimate, std_error) = ws.expectation(h)?;
    Ok(ImportanceEstimate {
        estimate,
        std_error,
        ess: ws.ess,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_derivatives_match_finite_differences() {
        let losses: Vec<Box<dyn Loss>> = vec![
            Box::new(SquaredError),
            Box::new(Huber { delta: 1.0 }),
            Box::new(SmoothAbsolute { eps: 0.3 }),
            Box::new(AbsoluteError),
        ];
        for loss in &losses {
            for &(th, t) in &[(0.2, 1.7), (-1.0, -3.1), (2.0, 2.4)] {
                let h = 1e-5;
                let fd1 = (loss.evaluate(th, t + h) - loss.evaluate(th, t - h)) / (2.0 * h);
                let fd2 = (loss.d1(th, t + h) - loss.d1(th, t - h)) / (2.0 * h);
                assert!((fd1 - loss.d1(th, t)).abs() < 1e-6);
                assert!((fd2 - loss.d2(th, t)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn absolute_loss_gives_median() {
        let v = [3.0, -1.0, 0.5, 10.0, 2.0];
        let t = weighted_loss_minimizer(&v, None, &AbsoluteError, 2.9).unwrap();
        assert!((t - 2.0).abs() < 1e-9);
    }

    #[test]
    fn constant_chain_erpe() {
        let chain = AlphaPosteriorChain {
            draws: DMatrix::from_fn(100, 2, |_, c| c as f64 + 0.5),
            log_post_values: DVector::zeros(100),
            acceptance_rate: 0.0,
            seed: 1,
            alpha: 0.5,
            burn_in: 0,
            thinning: 1,
            warnings: vec![],
        };
        let e = erpe(&chain).unwrap();
        assert_eq!(e.estimate.as_vector(), &DVector::from_vec(vec![0.5, 1.5]));
        assert_eq!(e.mc_se, DVector::zeros(2));
        assert_eq!(bayes_estimate_under_loss(&chain, 1, &SquaredError).unwrap(), 1.5);
    }

    #[test]
    fn prior_validation() {
        assert!(Prior::gaussian(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
        assert!(Prior::uniform_box(DVector::from_element(1, 1.0), DVector::from_element(1, 1.0)).is_err());
        let b = Prior::uniform_box(DVector::from_element(1, 0.0), DVector::from_element(1, 2.0)).unwrap();
        assert_eq!(b.log_density(&DVector::from_element(1, 3.0)), f64::NEG_INFINITY);
        assert!((b.log_density(&DVector::from_element(1, 1.0)) + 2f64.ln()).abs() < 1e-15);
    }
}
