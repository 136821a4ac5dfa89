//! Influence functions, pseudo-influence surfaces, sensitivities and
//! breakdown experiments for the R^(α)-posterior.
//!
//! Everything here works with the functional posterior
//! `π_α(θ; G) ∝ π(θ) exp(Q^(α)(θ; G))`, where the data are replaced by the
//! true distributions `G_i`. Posterior expectations are computed by
//! self-normalized importance sampling with a Gaussian proposal centered at
//! the functional posterior mode.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::alpha_likelihood::{expected_log_under, log_expected_power_under, TrueDistributionSpec};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{InhModel, Parameter};
use crate::optim::{maximize, FnObjective, MaximizeOptions, SmoothObjective};
use crate::posterior::{
    importance_sample_from_normals, log_target, standard_normals, weighted_loss_minimizer, GaussianProposal,
    Loss, Prior, Target, WeightedSample,
};

/// `k_{i,α}(θ, t, g_i) = (1/α)[f^α(t) − ∫f^α dG_i]`, or `log f(t) − ∫ log f dG_i` at α = 0.
pub fn k_function<M: InhModel + ?Sized>(
    model: &M,
    spec: &TrueDistributionSpec,
    i: usize,
    theta: &Parameter,
    t: f64,
    alpha: f64,
) -> Result<f64> {
    if i >= model.n_obs() {
        return Err(Error::Index {
            index: i,
            len: model.n_obs(),
        });
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("alpha must be non-negative, got {alpha}")));
    }
    spec.validate(Some(model.n_obs()))?;
    let base = base_term(model, spec, i, theta, alpha)?;
    Ok(k_from_base(model.log_density(i, t, theta)?, base, alpha))
}

/// `log ∫ f^α dG_i` for α > 0, `∫ log f dG_i` at α = 0.
fn base_term<M: InhModel + ?Sized>(
    model: &M,
    spec: &TrueDistributionSpec,
    i: usize,
    theta: &Parameter,
    alpha: f64,
) -> Result<f64> {
    if alpha == 0.0 {
        expected_log_under(model, spec, i, theta)
    } else {
        log_expected_power_under(model, spec, i, theta, alpha)
    }
}

fn k_from_base(log_f_t: f64, base: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        log_f_t - base
    } else {
        ((alpha * log_f_t).exp_m1() - base.exp_m1()) / alpha
    }
}

/// Where the contamination mass sits.
#[derive(Debug, Clone, PartialEq)]
pub enum ContaminationMode {
    /// Only `G_{i0}` is contaminated, at `t`.
    OneDirection { i0: usize, t: f64 },
    /// Every `G_i` is contaminated, `G_i` at `points[i]`.
    AllDirections { points: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContaminationScenario {
    pub mode: ContaminationMode,
    /// Contamination proportion (used by breakdown experiments only).
    pub epsilon: f64,
}

impl ContaminationScenario {
    pub fn one_direction(i0: usize, t: f64) -> Self {
        Self {
            mode: ContaminationMode::OneDirection { i0, t },
            epsilon: 0.0,
        }
    }

    /// All directions contaminated at the same point `t`.
    pub fn common(t: f64, n: usize) -> Self {
        Self {
            mode: ContaminationMode::AllDirections { points: vec![t; n] },
            epsilon: 0.0,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !(0.0..=0.5).contains(&self.epsilon) {
            return Err(Error::Domain(format!(
                "epsilon must lie in [0, 0.5], got {}",
                self.epsilon
            )));
        }
        match &self.mode {
            ContaminationMode::OneDirection { i0, t } => {
                if *i0 >= n {
                    return Err(Error::Index { index: *i0, len: n });
                }
                if !t.is_finite() {
                    return Err(Error::Domain("contamination point must be finite".into()));
                }
            }
            ContaminationMode::AllDirections { points } => {
                if points.len() != n {
                    return Err(Error::Dimension(format!(
                        "{} contamination points for {} observations",
                        points.len(),
                        n
                    )));
                }
                if points.iter().any(|t| !t.is_finite()) {
                    return Err(Error::Domain("contamination points must be finite".into()));
                }
            }
        }
        Ok(())
    }

    /// `(i, t_i)` pairs that receive contamination.
    fn pairs(&self) -> Vec<(usize, f64)> {
        match &self.mode {
            ContaminationMode::OneDirection { i0, t } => vec![(*i0, *t)],
            ContaminationMode::AllDirections { points } => points.iter().copied().enumerate().collect(),
        }
    }
}

/// Importance-sampling settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub draws: usize,
    pub seed: u64,
    /// Proposal standard deviations relative to the Laplace approximation.
    pub proposal_inflation: f64,
}

impl McConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            draws: 50_000,
            seed,
            proposal_inflation: 1.5,
        }
    }
}

/// Mode and curvature of a functional log posterior.
fn functional_mode<M: InhModel + ?Sized>(
    model: &M,
    spec: &TrueDistributionSpec,
    prior: &Prior,
    alpha: f64,
    start: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let obj = FnObjective::new(model.dim(), |x: &DVector<f64>| {
        log_target(model, Target::Functional(spec), prior, &Parameter::from_vector(x.clone()), alpha)
    });
    let opts = MaximizeOptions {
        gradient_tolerance: 1e-9,
        ..Default::default()
    };
    let r = maximize(&obj, start, &opts)?;
    let neg = -obj.hessian(&r.x)?;
    if linalg::cholesky(&neg).is_err() {
        return Err(Error::SingularHessian {
            min_eigenvalue: linalg::sym_eigenvalues(&neg)[0],
        });
    }
    Ok((r.x, neg))
}

/// Importance sample from `π_α(θ; G)` with caller-supplied standard normals.
pub fn functional_posterior_sample<M: InhModel + ?Sized>(
    model: &M,
    spec: &TrueDistributionSpec,
    prior: &Prior,
    alpha: f64,
    normals: &DMatrix<f64>,
    inflation: f64,
) -> Result<WeightedSample> {
    spec.validate(Some(model.n_obs()))?;
    let (mode, neg_h) = functional_mode(model, spec, prior, alpha, spec.theta_g().as_vector())?;
    let cov = linalg::spd_inverse(&neg_h)? * (inflation * inflation);
    let proposal = GaussianProposal {
        mean: mode,
        covariance: cov,
    };
    importance_sample_from_normals(model, Target::Functional(spec), prior, alpha, &proposal, normals)
}

/// Per-draw pieces needed to evaluate `Σ_i k_i(θ_j, t_i)` for many contamination points.
struct KCache {
    /// `base[j][i]` for every draw j and observation i.
    base: Vec<Vec<f64>>,
    alpha: f64,
}

impl KCache {
    fn new<M: InhModel + ?Sized>(
        model: &M,
        spec: &TrueDistributionSpec,
        draws: &[Parameter],
        alpha: f64,
    ) -> Result<Self> {
        let n = model.n_obs();
        let base = draws
            .iter()
            .map(|th| (0..n).map(|i| base_term(model, spec, i, th, alpha)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { base, alpha })
    }

    /// `K(θ_j) = Σ_{(i,t)} k_i(θ_j, t)` for every draw.
    fn totals<M: InhModel + ?Sized>(
        &self,
        model: &M,
        draws: &[Parameter],
        pairs: &[(usize, f64)],
    ) -> Result<Vec<f64>> {
        draws
            .iter()
            .enumerate()
            .map(|(j, th)| {
                let mut acc = 0.0;
                for &(i, t) in pairs {
                    acc += k_from_base(model.log_density(i, t, th)?, self.base[j][i], self.alpha);
                }
                Ok(acc)
            })
            .collect()
    }
}

fn weighted_mean(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Weighted covariance with a delta-method standard error.
fn weighted_cov(w: &[f64], a: &[f64], b: &[f64]) -> (f64, f64) {
    let ma = weighted_mean(w, a);
    let mb = weighted_mean(w, b);
    let prods: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let c = weighted_mean(w, &prods);
    let se = w
        .iter()
        .zip(&prods)
        .map(|(wi, p)| wi * wi * (p - c) * (p - c))
        .sum::<f64>()
        .sqrt();
    (c, se)
}

/// Influence function value with Monte Carlo standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct IfValue {
    pub value: DVector<f64>,
    pub std_error: DVector<f64>,
}

fn if_from_totals(ws: &WeightedSample, totals: &[f64]) -> IfValue {
    let p = ws.draws[0].len();
    let mut value = DVector::zeros(p);
    let mut se = DVector::zeros(p);
    for c in 0..p {
        let th: Vec<f64> = ws.draws.iter().map(|d| d[c]).collect();
        let (v, s) = weighted_cov(&ws.weights, &th, totals);
        value[c] = v;
        se[c] = s;
    }
    IfValue { value, std_error: se }
}

/// IF of the ERPE functional: `Cov_{π_α(·;G)}(θ, Σ_i k_{i,α}(θ, t_i, g_i))`.
pub fn if_erpe<M: InhModel + ?Sized>(
    model: &M,
    spec: &TrueDistributionSpec,
    prior: &Prior,
    alpha: f64,
    scenario: &ContaminationScenario,
    mc: &McConfig,
) -> Result<IfValue> {
    scenario.validate(model.n_obs())?;
    let normals = standard_normals(mc.draws, model.dim(), mc.seed);
    let ws = functional_posterior_sample(model, spec, prior, alpha, &normals, mc.proposal_inflation)?;
    let cache = KCache::new(model, spec, &ws.draws, alpha)?;
    let totals = cache.totals(model, &ws.draws, &scenario.pairs())?;
    Ok(if_from_totals(&ws, &totals))
}

/// Contamination direction for curves over a grid of points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    One(usize),
    /// All observations contaminated at the same point.
    All,
}

fn pairs_for(direction: Direction, t: f64, n: usize) -> Vec<(usize, f64)> {
    match direction {
        Direction::One(i0) => vec![(i0, t)],
        Direction::All => (0..n).map(|i| (i, t)).collect(),
    }
}

/// ERPE influence function along `t_grid`, sharing one importance sample across points.
pub fn if_curve<M: InhModel + ?Sized>(
    model: &M,
    spec: &TrueDistributionSpec,
    prior: &Prior,
    alpha: f64,
    t_grid: &[f64],
    direction: Direction,
    mc: &McConfig,
) -> Result<Vec<IfValue>> {
    if let Direction::One(i0) = direction {
        if i0 >= model.n_obs() {
            return Err(Error::Index {
                index: i0,
                len: model.n_obs(),
            });
        }
    }
    let normals = standard_normals(mc.draws, model.dim(), mc.seed);
    let ws = functional_posterior_sample(model, spec, prior, alpha, &normals, mc.proposal_inflation)?;
    let cache = KCache::new(model, spec, &ws.draws, alpha)?;
    t_grid
        .iter()
        .map(|&t| {
            let totals = cache.totals(model, &ws.draws, &pairs_for(direction, t, model.n_obs()))?;
            Ok(if_from_totals(&ws, &totals))
        })
        .collect()
}

/// IF of the R^(α)-Bayes estimate under `loss`: `−E[L'(θ,T) K(θ)] / E[L''(θ,T)]` (scalar θ).
pub fn if_general_loss<M, L>(
    model: &M,
    spec: &TrueDistributionSpec,
    prior: &Prior,
    alpha: f64,
    loss: &L,
    scenario: &ContaminationScenario,
    mc: &McConfig,
) -> Result<f64>
where
    M: InhModel + ?Sized,
    L: Loss + ?Sized,
{
    if model.dim() != 1 {
        return Err(Error::Unsupported("general-loss IF needs a scalar parameter".into()));
    }
    scenario.validate(model.n_obs())?;
    let normals = standard_normals(mc.draws, 1, mc.seed);
    let ws = functional_posterior_sample(model, spec, prior, alpha, &normals, mc.proposal_inflation)?;
    let th: Vec<f64> = ws.draws.iter().map(|d| d[0]).collect();
    let start = weighted_mean(&ws.weights, &th);
    let estimate = weighted_loss_minimizer(&th, Some(&ws.weights), loss, start)?;
    let cache = KCache::new(model, spec, &ws.draws, alpha)?;
    let totals = cache.totals(model, &ws.draws, &scenario.pairs())?;
    let d1: Vec<f64> = th.iter().map(|&v| loss.d1(v, estimate)).collect();
    let d2: Vec<f64> = th.iter().map(|&v| loss.d2(v, estimate)).collect();
    let den = weighted_mean(&ws.weights, &d2);
    if !(den > 0.0) {
        return Err(Error::IllPosedLoss(format!(
            "posterior mean of the second loss derivative is {den:.3e}"
        )));
    }
    // Cov form: E[L'] = 0 at the estimate, so centering only removes noise.
    let (num, _) = weighted_cov(&ws.weights, &d1, &totals);
    Ok(-num / den)
}

/// Pseudo-influence surface `I_α(θ; t) = K(θ; t) − E[K(·; t)]` on a θ × t grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PifSurface {
    pub alpha: f64,
    pub theta_grid: Vec<Parameter>,
    pub t_grid: Vec<f64>,
    /// `values[(a, b)]` at `theta_grid[a]`, `t_grid[b]`.
    pub values: DMatrix<f64>,
    /// Posterior variance of the PIF for each t.
    pub posterior_variance: Vec<f64>,
    /// Posterior mean of the PIF from an independent importance sample, per t.
    pub centering: Vec<f64>,
    pub centering_se: Vec<f64>,
}

/// Pseudo-influence function on a grid, with an independent centering check.
#[allow(clippy::too_many_arguments)]
pub fn pif<M: InhModel + ?Sized>(
    model: &M,
    spec: &TrueDistributionSpec,
    prior: &Prior,
    alpha: f64,
    theta_grid: &[Parameter],
    t_grid: &[f64],
    direction: Direction,
    mc: &McConfig,
) -> Result<PifSurface> {
    if theta_grid.is_empty() || t_grid.is_empty() {
        return Err(Error::InvalidConfig("empty θ or t grid".into()));
    }
    let n = model.n_obs();
    let normals = standard_normals(mc.draws, model.dim(), mc.seed);
    let ws = functional_posterior_sample(model, spec, prior, alpha, &normals, mc.proposal_inflation)?;
    let check_normals = standard_normals(mc.draws, model.dim(), mc.seed ^ 0x5eed_c0de);
    let check = functional_posterior_sample(model, spec, prior, alpha, &check_normals, mc.proposal_inflation)?;
    let cache = KCache::new(model, spec, &ws.draws, alpha)?;
    let check_cache = KCache::new(model, spec, &check.draws, alpha)?;
    let grid_cache = KCache::new(model, spec, theta_grid, alpha)?;

    let mut values = DMatrix::zeros(theta_grid.len(), t_grid.len());
    let mut posterior_variance = Vec::with_capacity(t_grid.len());
    let mut centering = Vec::with_capacity(t_grid.len());
    let mut centering_se = Vec::with_capacity(t_grid.len());
    for (b, &t) in t_grid.iter().enumerate() {
        let pairs = pairs_for(direction, t, n);
        let totals = cache.totals(model, &ws.draws, &pairs)?;
        let mean = weighted_mean(&ws.weights, &totals);
        let (var, _) = weighted_cov(&ws.weights, &totals, &totals);
        posterior_variance.push(var);
        let check_totals = check_cache.totals(model, &check.draws, &pairs)?;
        let centered: Vec<f64> = check_totals.iter().map(|k| k - mean).collect();
        let c = weighted_mean(&check.weights, &centered);
        let se = check
            .weights
            .iter()
            .zip(&centered)
            .map(|(w, v)| w * w * (v - c) * (v - c))
            .sum::<f64>()
            .sqrt();
        // The centering mean itself is estimated; add its error in quadrature.
        let mean_se = ws
            .weights
            .iter()
            .zip(&totals)
            .map(|(w, v)| w * w * (v - mean) * (v - mean))
            .sum::<f64>()
            .sqrt();
        centering.push(c);
        centering_se.push((se * se + mean_se * mean_se).sqrt());
        let grid_totals = grid_cache.totals(model, theta_grid, &pairs)?;
        for (a, k) in grid_totals.iter().enumerate() {
            values[(a, b)] = k - mean;
        }
    }
    Ok(PifSurface {
        alpha,
        theta_grid: theta_grid.to_vec(),
        t_grid: t_grid.to_vec(),
        values,
        posterior_variance,
        centering,
        centering_se,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivities {
    /// `γ(t) = sup_θ I(θ; t)` over the θ grid, per t.
    pub gamma: Vec<f64>,
    pub gamma_star: f64,
    /// `s(t) = φ''(1) Var[I(·; t)]`, per t.
    pub s: Vec<f64>,
    pub s_star: f64,
    /// Posterior mean of the PIF per t (first-order divergence rate over φ'(1)).
    pub first_order_mean: Vec<f64>,
}

pub fn sensitivities(surface: &PifSurface, phi_second_deriv_at_1: f64) -> Result<Sensitivities> {
    if surface.values.is_empty() {
        return Err(Error::InvalidConfig("empty pseudo-influence surface".into()));
    }
    let gamma: Vec<f64> = (0..surface.values.ncols())
        .map(|b| surface.values.column(b).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let s: Vec<f64> = surface
        .posterior_variance
        .iter()
        .map(|v| phi_second_deriv_at_1 * v)
        .collect();
    Ok(Sensitivities {
        gamma_star: gamma.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        s_star: s.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        gamma,
        s,
        first_order_mean: surface.centering.clone(),
    })
}

/// α = 0 ERPE influence function for the known-σ linear model with scalar β,
/// prior `N(μ₀, τ²)` and every observation contaminated at `t`:
/// `Σ z_i (t − z_i β^g)/σ² / (Σ z_i²/σ² + 1/τ²)`.
pub fn if_alpha0_linear(z: &[f64], sigma: f64, beta_g: f64, prior_var: f64, t: f64) -> f64 {
    let s2 = sigma * sigma;
    let num: f64 = z.iter().map(|zi| zi * (t - zi * beta_g)).sum::<f64>() / s2;
    let den: f64 = z.iter().map(|zi| zi * zi).sum::<f64>() / s2 + 1.0 / prior_var;
    num / den
}

/// α = 0 pseudo-influence function for the same setting:
/// `(β − E_post β) Σ z_i (t − z_i β^g)/σ²`.
pub fn pif_alpha0_linear(z: &[f64], sigma: f64, beta_g: f64, posterior_mean: f64, beta: f64, t: f64) -> f64 {
    let s2 = sigma * sigma;
    (beta - posterior_mean) * z.iter().map(|zi| zi * (t - zi * beta_g)).sum::<f64>() / s2
}

/// Posterior mean of β at α = 0 for the functional posterior in the same setting.
pub fn posterior_mean_alpha0_linear(z: &[f64], sigma: f64, beta_g: f64, prior_mean: f64, prior_var: f64) -> f64 {
    let s2 = sigma * sigma;
    let zz: f64 = z.iter().map(|zi| zi * zi).sum::<f64>() / s2;
    (zz * beta_g + prior_mean / prior_var) / (zz + 1.0 / prior_var)
}

/// How the estimator functional is computed in a breakdown experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BreakdownMethod {
    /// Functional posterior mean by importance sampling.
    ImportanceSampling(McConfig),
    /// Minimum-divergence functional (maximizer of the functional α-likelihood).
    MinimumDivergence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreakdownPoint {
    pub magnitude: f64,
    /// `|T(H_m) − T(G)|` in the first coordinate.
    pub shift: f64,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreakdownCurve {
    pub alpha: f64,
    pub epsilon: f64,
    pub baseline: f64,
    pub points: Vec<BreakdownPoint>,
}

impl BreakdownCurve {
    /// Largest relative change of the shift over the last `k` magnitudes.
    pub fn tail_relative_change(&self, k: usize) -> f64 {
        let m = self.points.len();
        if m < 2 || k < 2 {
            return 0.0;
        }
        let tail = &self.points[m.saturating_sub(k)..];
        let hi = tail.iter().map(|p| p.shift).fold(f64::NEG_INFINITY, f64::max);
        let lo = tail.iter().map(|p| p.shift).fold(f64::INFINITY, f64::min);
        if hi == 0.0 {
            0.0
        } else {
            (hi - lo) / hi.abs()
        }
    }
}

fn functional_estimate<M: InhModel + ?Sized>(
    model: &M,
    spec: &TrueDistributionSpec,
    prior: &Prior,
    alpha: f64,
    method: &BreakdownMethod,
    normals: Option<&DMatrix<f64>>,
) -> Result<(f64, f64)> {
    match method {
        BreakdownMethod::ImportanceSampling(mc) => {
            let z = normals.expect("normals supplied for importance sampling");
            let ws = functional_posterior_sample(model, spec, prior, alpha, z, mc.proposal_inflation)?;
            let (m, se) = ws.expectation(|t| Ok(DVector::from_element(1, t[0])))?;
            Ok((m[0], se[0]))
        }
        BreakdownMethod::MinimumDivergence => {
            let obj = FnObjective::new(model.dim(), |x: &DVector<f64>| {
                crate::alpha_likelihood::q_alpha_functional(model, spec, &Parameter::from_vector(x.clone()), alpha)
            });
            let r = maximize(&obj, spec.theta_g().as_vector(), &MaximizeOptions {
                gradient_tolerance: 1e-10,
                ..Default::default()
            })?;
            Ok((r.x[0], 0.0))
        }
    }
}

/// Shift of the estimator functional under `(1−ε)G_i + ε Λ_{t_i}` with
/// `t_i = E_g[X_i] + m` for each magnitude `m`.
///
/// Importance sampling reuses the same standard normals for every magnitude,
/// so the curve is smooth in `m` and exactly zero when ε = 0.
pub fn breakdown_experiment<M: InhModel + ?Sized>(
    model: &M,
    theta_g: &Parameter,
    prior: &Prior,
    alpha: f64,
    epsilon: f64,
    magnitudes: &[f64],
    method: &BreakdownMethod,
) -> Result<BreakdownCurve> {
    if !(0.0..=0.5).contains(&epsilon) {
        return Err(Error::Domain(format!("epsilon must lie in [0, 0.5], got {epsilon}")));
    }
    if magnitudes.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidConfig("magnitudes must be increasing".into()));
    }
    let n = model.n_obs();
    let normals = match method {
        BreakdownMethod::ImportanceSampling(mc) => Some(standard_normals(mc.draws, model.dim(), mc.seed)),
        BreakdownMethod::MinimumDivergence => None,
    };
    let clean = TrueDistributionSpec::in_model(theta_g.clone());
    let (baseline, _) = functional_estimate(model, &clean, prior, alpha, method, normals.as_ref())?;
    let centers = (0..n)
        .map(|i| model.location_hint(i, theta_g).0)
        .collect::<Vec<_>>();
    let mut points = Vec::with_capacity(magnitudes.len());
    for &m in magnitudes {
        let spec = TrueDistributionSpec::contaminated(
            theta_g.clone(),
            epsilon,
            centers.iter().map(|c| c + m).collect(),
        )?;
        let (estimate, std_error) = functional_estimate(model, &spec, prior, alpha, method, normals.as_ref())?;
        points.push(BreakdownPoint {
            magnitude: m,
            shift: (estimate - baseline).abs(),
            estimate,
            std_error,
        });
    }
    Ok(BreakdownCurve {
        alpha,
        epsilon,
        baseline,
        points,
    })
}

/// Collected robustness outputs for one α.
#[derive(Debug, Clone, Default)]
pub struct RobustnessReport {
    pub alpha: f64,
    pub if_values: Vec<(f64, IfValue)>,
    pub pif_surface: Option<PifSurface>,
    pub sensitivities: Option<Sensitivities>,
    pub breakdown_curve: Option<BreakdownCurve>,
}

impl Default for IfValue {
    fn default() -> Self {
        Self {
            value: DVector::zeros(0),
            std_error: DVector::zeros(0),
        }
    }
}

/// One row of long-format output.
#[derive(Debug, Clone, PartialEq)]
pub struct LongRow {
    pub alpha: f64,
    pub theta: f64,
    pub t: f64,
    pub value: f64,
}

impl RobustnessReport {
    /// Rows for the IF curve (`theta` is NaN), the PIF surface and the breakdown curve
    /// (`t` holds the magnitude, `theta` is NaN).
    pub fn long_rows(&self) -> Vec<(String, LongRow)> {
        let mut rows = Vec::new();
        for (t, v) in &self.if_values {
            rows.push((
                "if".to_string(),
                LongRow {
                    alpha: self.alpha,
                    theta: f64::NAN,
                    t: *t,
                    value: v.value[0],
                },
            ));
        }
        if let Some(s) = &self.pif_surface {
            for (a, th) in s.theta_grid.iter().enumerate() {
                for (b, t) in s.t_grid.iter().enumerate() {
                    rows.push((
                        "pif".to_string(),
                        LongRow {
                            alpha: self.alpha,
                            theta: th[0],
                            t: *t,
                            value: s.values[(a, b)],
                        },
                    ));
                }
            }
        }
        if let Some(c) = &self.breakdown_curve {
            for p in &c.points {
                rows.push((
                    "breakdown".to_string(),
                    LongRow {
                        alpha: self.alpha,
                        theta: f64::NAN,
                        t: p.magnitude,
                        value: p.shift,
                    },
                ));
            }
        }
        rows
    }
}

/// Writes `kind, alpha, theta, t, value` rows.
pub fn write_long_csv<W: Write>(rows: &[(String, LongRow)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["kind", "alpha", "theta", "t", "value"])?;
    for (kind, r) in rows {
        w.write_record([
            kind.clone(),
            format!("{}", r.alpha),
            format!("{}", r.theta),
            format!("{}", r.t),
            format!("{}", r.value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Family, RegressionModel};

    fn location(n: usize) -> RegressionModel {
        RegressionModel::new(Family::LinearKnownSigma { sigma: 1.0 }, DMatrix::from_element(n, 1, 1.0)).unwrap()
    }

    #[test]
    fn closed_form_if_reduces_to_unit_design_formula() {
        let z = vec![1.0; 20];
        for t in [-3.0, 0.0, 5.0, 12.5] {
            let v = if_alpha0_linear(&z, 1.0, 5.0, 1.0, t);
            assert!((v - 20.0 * (t - 5.0) / 21.0).abs() < 1e-12);
        }
    }

    #[test]
    fn k_bounded_for_positive_alpha() {
        let m = location(1);
        let g = Parameter::new(vec![0.0]);
        let spec = TrueDistributionSpec::in_model(g.clone());
        let far = k_function(&m, &spec, 0, &g, 1e6, 0.5).unwrap();
        let base = m.log_expected_density_power(0, &g, 0.5, &g).unwrap().exp();
        assert!((far + base / 0.5).abs() < 1e-12);
        let at_mean = k_function(&m, &spec, 0, &g, 0.0, 0.5).unwrap();
        assert!(at_mean > 0.0);
        let k0 = k_function(&m, &spec, 0, &g, 100.0, 0.0).unwrap();
        assert!(k0 < -4000.0);
    }

    #[test]
    fn scenario_validation() {
        let s = ContaminationScenario::one_direction(3, 1.0);
        assert!(s.validate(2).is_err());
        let mut s = ContaminationScenario::common(1.0, 2);
        assert!(s.validate(2).is_ok());
        s.epsilon = 0.7;
        assert!(s.validate(2).is_err());
    }

    #[test]
    fn breakdown_zero_epsilon_is_flat() {
        let m = location(10);
        let prior = Prior::isotropic(DVector::from_element(1, 0.0), 3.0).unwrap();
        let mut mc = McConfig::new(4);
        mc.draws = 2000;
        let c = breakdown_experiment(
            &m,
            &Parameter::new(vec![5.0]),
            &prior,
            0.5,
            0.0,
            &[10.0, 100.0],
            &BreakdownMethod::ImportanceSampling(mc),
        )
        .unwrap();
        assert!(c.points.iter().all(|p| p.shift == 0.0));
    }
}
