use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rposterior::alpha_likelihood::{q_alpha, Derivatives, TrueDistributionSpec};
use rposterior::diagnostics::{bvm_distance, efficiency, BvmScaling};
use rposterior::model::{zeta, InhModel};
use rposterior::posterior::{weighted_loss_minimizer, SquaredError};
use rposterior::robustness::k_function;
use rposterior::{Dataset, Family, Parameter, RegressionModel};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn upsilon_is_ratio_of_zetas(alpha in 0.0f64..2.0, sigma in 0.2f64..5.0) {
        let e = efficiency(alpha, sigma).unwrap();
        let ratio = zeta(2.0 * alpha, sigma) / zeta(alpha, sigma).powi(2) / (sigma * sigma);
        prop_assert!((e.upsilon_beta - ratio).abs() < 1e-12 * ratio.max(1.0));
    }

    #[test]
    fn efficiencies_decrease_in_alpha(a in 0.0f64..1.5, d in 1e-3f64..0.5) {
        let lo = efficiency(a, 1.0).unwrap();
        let hi = efficiency(a + d, 1.0).unwrap();
        prop_assert!(hi.are_beta_percent < lo.are_beta_percent);
        prop_assert!(hi.are_sigma_percent < lo.are_sigma_percent);
        prop_assert!(lo.are_beta_percent <= 100.0 + 1e-12);
    }

    #[test]
    fn k_is_bounded_for_positive_alpha(alpha in 0.05f64..1.0, t in -1e6f64..1e6, b in -3.0f64..3.0) {
        let m = RegressionModel::new(Family::LinearKnownSigma { sigma: 1.0 }, DMatrix::from_element(2, 1, 1.0)).unwrap();
        let spec = TrueDistributionSpec::in_model(Parameter::new(vec![0.0]));
        let th = Parameter::new(vec![b]);
        let k = k_function(&m, &spec, 0, &th, t, alpha).unwrap();
        // f^α ≤ (2π)^{-α/2} for a unit-variance normal density.
        let bound = 2.0 * (2.0 * std::f64::consts::PI).powf(-alpha / 2.0) / alpha;
        prop_assert!(k.abs() <= bound);
    }

    #[test]
    fn alpha_likelihood_gradient_vanishes_at_mdpde(seed in 0u64..1000, alpha in 0.0f64..0.8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(30, 2, |i, j| if j == 0 { 1.0 } else { i as f64 / 10.0 - 1.5 });
        let m = RegressionModel::new(Family::LinearKnownSigma { sigma: 1.0 }, z).unwrap();
        let d = m.simulate(&Parameter::new(vec![0.5, -1.0]), &mut rng).unwrap();
        let r = rposterior::mdpde::fit(&m, &d, alpha, &Default::default()).unwrap();
        let g = q_alpha(&m, &d, &r.theta_hat, alpha, Derivatives::Gradient).unwrap().gradient.unwrap();
        prop_assert!(g.amax() < 1e-6);
    }

    #[test]
    fn squared_error_minimizer_is_weighted_mean(values in prop::collection::vec(-50.0f64..50.0, 2..40)) {
        let w: Vec<f64> = (0..values.len()).map(|k| 1.0 + (k % 3) as f64).collect();
        let total: f64 = w.iter().sum();
        let mean = values.iter().zip(&w).map(|(v, w)| v * w).sum::<f64>() / total;
        let got = weighted_loss_minimizer(&values, Some(&w), &SquaredError, 0.0).unwrap();
        prop_assert!((got - mean).abs() < 1e-8);
    }

    #[test]
    fn csv_round_trip(rows in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..20)) {
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.0));
        let z = DMatrix::from_fn(rows.len(), 2, |i, j| if j == 0 { 1.0 } else { rows[i].1 });
        let d = Dataset::new(y, z).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = Dataset::from_csv_reader(buf.as_slice(), true).unwrap();
        prop_assert_eq!(d, back);
    }

    #[test]
    fn log_density_integrates_to_one_for_binary(eta in -8.0f64..8.0) {
        let m = RegressionModel::new(Family::Logistic, DMatrix::from_element(1, 1, 1.0)).unwrap();
        let th = Parameter::new(vec![eta]);
        let total = m.log_density(0, 0.0, &th).unwrap().exp() + m.log_density(0, 1.0, &th).unwrap().exp();
        prop_assert!((total - 1.0).abs() < 1e-14);
    }
}

#[test]
fn bvm_self_distance_and_affine_invariance() {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = 50_000;
    let n = 100;
    let psi = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let cov = psi.clone().try_inverse().unwrap();
    let l = cov.clone().cholesky().unwrap().l();
    let hat = Parameter::new(vec![1.0, -1.0]);
    let draws = DMatrix::from_fn(m, 2, |_, _| StandardNormal.sample(&mut rng));
    let mut chain = DMatrix::zeros(m, 2);
    for r in 0..m {
        let x = &l * draws.row(r).transpose() / (n as f64).sqrt() + hat.as_vector();
        chain.set_row(r, &x.transpose());
    }
    let rep = bvm_distance(&chain, &hat, &psi, n, 0.3, BvmScaling::PsiAtThetaG).unwrap();
    assert!(rep.tv_estimate < 0.03, "{}", rep.tv_estimate);
    assert!(rep.product_approximation);

    // Rescale one coordinate of the parameter and the curvature consistently.
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 0.5]));
    let ainv = a.clone().try_inverse().unwrap();
    let chain2 = &chain * &a;
    let hat2 = Parameter::from_vector(&a * hat.as_vector());
    let psi2 = &ainv * &psi * &ainv;
    let rep2 = bvm_distance(&chain2, &hat2, &psi2, n, 0.3, BvmScaling::PsiAtThetaG).unwrap();
    assert!((rep.tv_estimate - rep2.tv_estimate).abs() < 0.01);
}

#[test]
fn bvm_rejects_short_chains() {
    let chain = DMatrix::zeros(999, 1);
    let e = bvm_distance(&chain, &Parameter::new(vec![0.0]), &DMatrix::identity(1, 1), 10, 0.1, BvmScaling::PsiAtThetaG);
    assert!(matches!(e, Err(rposterior::Error::InsufficientSample { .. })));
}

#[test]
fn efficiency_table_matches_published_values() {
    use rposterior::diagnostics::{are_table, TABLE_ALPHAS, TABLE_ARE_BETA, TABLE_ARE_SIGMA};
    let t = are_table(&TABLE_ALPHAS).unwrap();
    for (k, r) in t.iter().enumerate() {
        assert!((r.are_beta_percent - TABLE_ARE_BETA[k]).abs() <= 0.01);
        assert!((r.are_sigma_percent - TABLE_ARE_SIGMA[k]).abs() <= 0.01);
    }
}
