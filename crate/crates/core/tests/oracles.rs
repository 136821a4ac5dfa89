use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rposterior::alpha_likelihood::{q_alpha, q_alpha_functional, Derivatives, TrueDistributionSpec};
use rposterior::mdpde::{fit, population_sandwich, FitOptions};
use rposterior::model::{integral_power, logistic_probability, v_term, zeta, Support};
use rposterior::numeric::{fd_gradient, fd_jacobian};
use rposterior::{Dataset, Family, InhModel, Parameter, RegressionModel};

/// Same densities as the wrapped model, but every integral over the response
/// goes through the generic quadrature defaults.
struct Generic(RegressionModel);

/// Like [`Generic`] but with the wrapped model's pointwise derivatives, so that
/// expectations of derivatives are integrated numerically without differencing noise.
struct GenericExpectations(RegressionModel);

impl InhModel for GenericExpectations {
    fn n_obs(&self) -> usize {
        self.0.n_obs()
    }
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn check_parameter(&self, theta: &Parameter) -> rposterior::Result<()> {
        self.0.check_parameter(theta)
    }
    fn support(&self, i: usize) -> Support {
        self.0.support(i)
    }
    fn location_hint(&self, i: usize, theta: &Parameter) -> (f64, f64) {
        self.0.location_hint(i, theta)
    }
    fn log_density(&self, i: usize, x: f64, theta: &Parameter) -> rposterior::Result<f64> {
        self.0.log_density(i, x, theta)
    }
    fn grad_log_density(&self, i: usize, x: f64, theta: &Parameter) -> rposterior::Result<DVector<f64>> {
        self.0.grad_log_density(i, x, theta)
    }
    fn hess_log_density(&self, i: usize, x: f64, theta: &Parameter) -> rposterior::Result<DMatrix<f64>> {
        self.0.hess_log_density(i, x, theta)
    }
    fn log_integral_power(&self, i: usize, theta: &Parameter, alpha: f64) -> rposterior::Result<f64> {
        self.0.log_integral_power(i, theta, alpha)
    }
    fn integral_power_derivatives(
        &self,
        i: usize,
        theta: &Parameter,
        alpha: f64,
    ) -> rposterior::Result<(DVector<f64>, DMatrix<f64>)> {
        self.0.integral_power_derivatives(i, theta, alpha)
    }
}

impl InhModel for Generic {
    fn n_obs(&self) -> usize {
        self.0.n_obs()
    }
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn check_parameter(&self, theta: &Parameter) -> rposterior::Result<()> {
        self.0.check_parameter(theta)
    }
    fn support(&self, i: usize) -> Support {
        self.0.support(i)
    }
    fn location_hint(&self, i: usize, theta: &Parameter) -> (f64, f64) {
        self.0.location_hint(i, theta)
    }
    fn log_density(&self, i: usize, x: f64, theta: &Parameter) -> rposterior::Result<f64> {
        self.0.log_density(i, x, theta)
    }
}

fn normal_design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.sample::<f64, _>(StandardNormal) })
}

fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

fn random_case(rng: &mut ChaCha8Rng, k: usize) -> (RegressionModel, Dataset, Parameter, f64) {
    let n = 15;
    let p = 1 + k % 3;
    let z = normal_design(rng, n, p);
    let family = match k % 3 {
        0 => Family::LinearKnownSigma { sigma: 0.5 + rng.random::<f64>() },
        1 => Family::LinearUnknownSigma,
        _ => Family::Logistic,
    };
    let model = RegressionModel::new(family, z).unwrap();
    let mut theta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    if matches!(family, Family::LinearUnknownSigma) {
        theta.push(rng.random_range(0.6..2.0));
    }
    let theta = Parameter::new(theta);
    let data = model.simulate(&theta, rng).unwrap();
    let alpha = if k % 7 == 0 { 0.0 } else { rng.random_range(0.01..1.0) };
    // Probe away from the generating value.
    let probe = Parameter::from_vector(theta.as_vector().map(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal)));
    (model, data, probe, alpha)
}

#[test]
fn analytic_derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_g: f64 = 0.0;
    let mut worst_h: f64 = 0.0;
    for k in 0..100 {
        let (model, data, theta, alpha) = random_case(&mut rng, k);
        let v = q_alpha(&model, &data, &theta, alpha, Derivatives::Hessian).unwrap();
        let value = |x: &DVector<f64>| {
            q_alpha(&model, &data, &Parameter::from_vector(x.clone()), alpha, Derivatives::None)
                .unwrap()
                .value
        };
        let grad = |x: &DVector<f64>| {
            q_alpha(&model, &data, &Parameter::from_vector(x.clone()), alpha, Derivatives::Gradient)
                .unwrap()
                .gradient
                .unwrap()
        };
        let g_fd = fd_gradient(value, theta.as_vector(), 1e-6);
        let h_fd = fd_jacobian(grad, theta.as_vector(), 1e-6);
        worst_g = worst_g.max(rel_err_vec(v.gradient.as_ref().unwrap(), &g_fd));
        worst_h = worst_h.max(rel_err_mat(v.hessian.as_ref().unwrap(), &h_fd));
    }
    assert!(worst_g < 1e-6, "gradient relative error {worst_g:e}");
    assert!(worst_h < 1e-6, "Hessian relative error {worst_h:e}");
}

#[test]
fn closed_form_integrals_match_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for family in [Family::LinearKnownSigma { sigma: 1.3 }, Family::LinearUnknownSigma] {
        let z = normal_design(&mut rng, 5, 2);
        let m = RegressionModel::new(family, z).unwrap();
        let g = Generic(m.clone());
        let theta = if m.dim() == 3 {
            Parameter::new(vec![0.3, -0.7, 0.8])
        } else {
            Parameter::new(vec![0.3, -0.7])
        };
        let theta_g = if m.dim() == 3 {
            Parameter::new(vec![0.1, -0.2, 1.1])
        } else {
            Parameter::new(vec![0.1, -0.2])
        };
        for alpha in [0.05, 0.3, 0.5, 1.0] {
            for i in 0..5 {
                let a = m.log_integral_power(i, &theta, alpha).unwrap();
                let b = g.log_integral_power(i, &theta, alpha).unwrap();
                assert!((a - b).abs() < 1e-8, "integral power {a} vs {b}");
                let a = m.log_expected_density_power(i, &theta, alpha, &theta_g).unwrap();
                let b = g.log_expected_density_power(i, &theta, alpha, &theta_g).unwrap();
                assert!((a - b).abs() < 1e-8, "expected power {a} vs {b}");
            }
        }
        for i in 0..5 {
            let a = m.expected_log_density(i, &theta, &theta_g).unwrap();
            let b = g.expected_log_density(i, &theta, &theta_g).unwrap();
            assert!((a - b).abs() < 1e-8);
        }
    }
}

#[test]
fn closed_form_sandwich_matches_numeric_route() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for family in [Family::LinearKnownSigma { sigma: 0.9 }, Family::LinearUnknownSigma, Family::Logistic] {
        let z = normal_design(&mut rng, 6, 2);
        let m = RegressionModel::new(family, z).unwrap();
        let g = GenericExpectations(m.clone());
        let theta = if m.dim() == 3 {
            Parameter::new(vec![0.4, -0.3, 1.2])
        } else {
            Parameter::new(vec![0.4, -0.3])
        };
        for alpha in [0.1, 0.5] {
            let a = population_sandwich(&m, &theta, alpha, &theta).unwrap();
            let b = population_sandwich(&g, &theta, alpha, &theta).unwrap();
            assert!(rel_err_mat(&a.0, &b.0) < 1e-4, "{family:?} psi\n{}\n{}", a.0, b.0);
            assert!(rel_err_mat(&a.1, &b.1) < 1e-4, "{family:?} omega\n{}\n{}", a.1, b.1);
        }
    }
}

#[test]
fn logistic_sandwich_matches_exponential_form() {
    let z = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 1.0, -1.2, 1.0, 2.0]);
    let m = RegressionModel::new(Family::Logistic, z.clone()).unwrap();
    let beta = DVector::from_vec(vec![0.3, -0.8]);
    let alpha = 0.4;
    let th = Parameter::from_vector(beta.clone());
    let sw = population_sandwich(&m, &th, alpha, &th).unwrap();
    let mut psi = DMatrix::zeros(2, 2);
    let mut omega = DMatrix::zeros(2, 2);
    for i in 0..3 {
        let zi = z.row(i).transpose();
        let eta = zi.dot(&beta);
        let (e, ea) = (eta.exp(), (alpha * eta).exp());
        psi += &zi * zi.transpose() * (e * (ea + e) / (1.0 + e).powf(3.0 + alpha));
        omega += &zi * zi.transpose() * (e * (ea + e).powi(2) / (1.0 + e).powf(4.0 + 2.0 * alpha));
    }
    psi /= 3.0;
    omega /= 3.0;
    assert!(rel_err_mat(&sw.0, &psi) < 1e-12, "{}\n{}", sw.0, psi);
    assert!(rel_err_mat(&sw.1, &omega) < 1e-12, "{}\n{}", sw.1, omega);
}

#[test]
fn linear_sandwich_constants() {
    let z = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, -1.0, 0.5]);
    let sigma = 1.7;
    let alpha = 0.35;
    let m = RegressionModel::new(Family::LinearKnownSigma { sigma }, z.clone()).unwrap();
    let th = Parameter::new(vec![0.2]);
    let sw = population_sandwich(&m, &th, alpha, &th).unwrap();
    let zz = z.norm_squared() / 4.0;
    assert!((sw.0[(0, 0)] - zeta(alpha, sigma) * zz).abs() < 1e-12);
    assert!((sw.1[(0, 0)] - zeta(2.0 * alpha, sigma) * zz).abs() < 1e-12);
}

/// Weighted least squares iterations for the logistic likelihood.
fn irls(z: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let mut beta = DVector::zeros(z.ncols());
    for _ in 0..100 {
        let eta = z * &beta;
        let pi = eta.map(logistic_probability);
        let w = pi.map(|p| p * (1.0 - p));
        let zt_w = DMatrix::from_fn(z.ncols(), z.nrows(), |j, i| z[(i, j)] * w[i]);
        let step = (&zt_w * z).lu().solve(&(z.transpose() * (y - &pi))).unwrap();
        beta += &step;
        if step.amax() < 1e-14 {
            break;
        }
    }
    beta
}

#[test]
fn alpha_zero_logistic_fit_is_irls() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let z = normal_design(&mut rng, 300, 3);
    let m = RegressionModel::new(Family::Logistic, z.clone()).unwrap();
    let data = m.simulate(&Parameter::new(vec![0.5, -1.0, 0.7]), &mut rng).unwrap();
    let r = fit(&m, &data, 0.0, &FitOptions::default()).unwrap();
    let oracle = irls(&z, data.responses());
    assert!((r.theta_hat.as_vector() - oracle).amax() < 1e-4);
}

#[test]
fn alpha_zero_linear_fit_is_ols() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let z = normal_design(&mut rng, 120, 3);
    let m = RegressionModel::new(Family::LinearKnownSigma { sigma: 1.0 }, z.clone()).unwrap();
    let data = m.simulate(&Parameter::new(vec![1.0, 2.0, -0.5]), &mut rng).unwrap();
    let r = fit(&m, &data, 0.0, &FitOptions::default()).unwrap();
    let ols = (z.transpose() * &z).cholesky().unwrap().solve(&(z.transpose() * data.responses()));
    assert!((r.theta_hat.as_vector() - ols).amax() < 1e-8);
}

#[test]
fn alpha_likelihood_equals_negative_v_sum_up_to_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let z = normal_design(&mut rng, 12, 2);
    let m = RegressionModel::new(Family::LinearUnknownSigma, z).unwrap();
    let data = m.simulate(&Parameter::new(vec![0.2, 1.0, 1.5]), &mut rng).unwrap();
    let th = Parameter::new(vec![0.1, 0.9, 1.2]);
    for alpha in [0.2, 0.7] {
        let q = q_alpha(&m, &data, &th, alpha, Derivatives::None).unwrap().value;
        let v: f64 = (0..12).map(|i| v_term(&m, i, data.response(i), &th, alpha).unwrap()).sum();
        let n = 12.0;
        assert!((q - (-v / (1.0 + alpha) - n / alpha)).abs() < 1e-10);
    }
}

#[test]
fn functional_matches_monte_carlo_average() {
    // Q(θ; G) = E_G[Q_n(θ; X)] for data drawn from G.
    let z = DMatrix::from_row_slice(3, 1, &[1.0, 0.5, 2.0]);
    let m = RegressionModel::new(Family::LinearKnownSigma { sigma: 1.0 }, z).unwrap();
    let g = Parameter::new(vec![1.0]);
    let th = Parameter::new(vec![0.8]);
    let alpha = 0.5;
    let exact = q_alpha_functional(&m, &TrueDistributionSpec::in_model(g.clone()), &th, alpha).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let reps = 40_000;
    let mut acc = 0.0;
    let mut acc2 = 0.0;
    for _ in 0..reps {
        let d = m.simulate(&g, &mut rng).unwrap();
        let v = q_alpha(&m, &d, &th, alpha, Derivatives::None).unwrap().value;
        acc += v;
        acc2 += v * v;
    }
    let mean = acc / reps as f64;
    let se = ((acc2 / reps as f64 - mean * mean) / reps as f64).sqrt();
    assert!((mean - exact).abs() < 4.0 * se, "{mean} vs {exact} (se {se})");
}

#[test]
fn integral_power_of_binary_model() {
    let z = DMatrix::from_row_slice(1, 1, &[0.7]);
    let m = RegressionModel::new(Family::Logistic, z).unwrap();
    let th = Parameter::new(vec![1.1]);
    let pi = logistic_probability(0.77);
    for alpha in [0.0, 0.3, 1.0] {
        let got = integral_power(&m, 0, &th, alpha).unwrap();
        let want = pi.powf(1.0 + alpha) + (1.0 - pi).powf(1.0 + alpha);
        assert!((got - want).abs() < 1e-14);
    }
}
