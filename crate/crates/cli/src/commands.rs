use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use rposterior::alpha_likelihood::TrueDistributionSpec;
use rposterior::diagnostics::{are_table as are_rows, bvm_distance, BvmScaling, TABLE_ALPHAS, TABLE_ARE_BETA, TABLE_ARE_SIGMA};
use rposterior::laplace::laplace_expectation;
use rposterior::mdpde::{asymptotic_covariance, fit as mdpde_fit, population_sandwich, sandwich, FitOptions};
use rposterior::posterior::{erpe as erpe_of, sample as run_sampler, standard_normals, Proposal, SamplerConfig};
use rposterior::robustness::{
    breakdown_experiment, functional_posterior_sample, if_curve, pif, sensitivities, BreakdownMethod, Direction,
    McConfig,
};
use rposterior::{Dataset, InhModel, Parameter, RegressionModel};

use crate::config::{output_path, parse_family, ExperimentConfig};
use crate::output::{Cell, Table};
use crate::CliError;

fn matrix_text(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "{name}:");
    for r in 0..m.nrows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:>14.6e}")).collect();
        let _ = writeln!(out, "  {}", row.join(" "));
    }
}

pub fn fit(data: &Path, model: &str, alpha: f64, sigma: f64, header: bool) -> Result<(), CliError> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(CliError::Config(format!("alpha must be non-negative, got {alpha}")));
    }
    let family = parse_family(model, sigma)?;
    let data = Dataset::from_csv_path(data, header)?;
    let m = RegressionModel::for_data(family, &data)?;
    let r = mdpde_fit(&m, &data, alpha, &FitOptions::default())?;
    let mut out = String::new();
    let _ = writeln!(out, "model: {}", family.name());
    let _ = writeln!(out, "n: {}  parameters: {}  alpha: {alpha}", data.n(), m.dim());
    let _ = writeln!(out, "converged: {}  iterations: {}  gradient norm: {:.3e}", r.converged, r.iterations, r.gradient_norm);
    let _ = writeln!(out, "Q at estimate: {}", r.q_value);
    let est: Vec<String> = r.theta_hat.iter().map(|v| format!("{v:.10}")).collect();
    let _ = writeln!(out, "theta_hat: {}", est.join(" "));
    let sw = sandwich(&m, &data, &r.theta_hat, alpha)?;
    matrix_text(&mut out, "Psi (model-based)", &sw.psi);
    matrix_text(&mut out, "Omega (model-based)", &sw.omega);
    matrix_text(&mut out, "Psi (observed)", &sw.psi_hat);
    matrix_text(&mut out, "asymptotic covariance of theta_hat", &asymptotic_covariance(&sw, data.n())?);
    print!("{out}");
    if !r.converged {
        return Err(CliError::NonConvergence(format!(
            "gradient norm {:.3e} after {} iterations",
            r.gradient_norm, r.iterations
        )));
    }
    Ok(())
}

fn sampler_config(cfg: &ExperimentConfig, stream: u64) -> SamplerConfig {
    let s = &cfg.sampler;
    let mut sc = SamplerConfig::new(cfg.seed());
    sc.chain_length = s.chain_length;
    sc.burn_in = s.burn_in;
    sc.thinning = s.thinning;
    sc.stream = stream;
    sc.proposal = match s.scale {
        Some(k) => Proposal::Scaled(k),
        None => Proposal::Auto,
    };
    sc
}

fn alpha_tag(a: f64) -> String {
    format!("{a}").replace('.', "p")
}

pub fn sample(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let (model, data) = cfg.dataset()?;
    let prior = cfg.prior(model.dim())?;
    let p = model.dim();
    let mut cols: Vec<String> = vec!["draw".into()];
    cols.extend((1..=p).map(|j| format!("theta{j}")));
    cols.push("log_post".into());
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    for (k, &alpha) in cfg.alphas.iter().enumerate() {
        let chain = run_sampler(&model, &data, &prior, alpha, &sampler_config(cfg, 100 + k as u64))?;
        let mut t = Table::new(cfg, &col_refs);
        for r in 0..chain.len() {
            let mut row: Vec<Cell> = vec![Cell::from(r)];
            row.extend(chain.draws.row(r).iter().map(|v| Cell::Num(*v)));
            row.push(Cell::Num(chain.log_post_values[r]));
            t.push(alpha, row);
        }
        let path = output_path(cfg, &format!("chain_alpha_{}", alpha_tag(alpha)))?;
        t.write_file(cfg.format, &path)?;
        println!(
            "alpha {alpha}: {} draws, acceptance {:.3} -> {}",
            chain.len(),
            chain.acceptance_rate,
            path.display()
        );
        for w in &chain.warnings {
            eprintln!("warning (alpha {alpha}): {w}");
        }
    }
    Ok(())
}

pub fn erpe(cfg: &ExperimentConfig, laplace: bool) -> Result<(), CliError> {
    let (model, data) = cfg.dataset()?;
    let prior = cfg.prior(model.dim())?;
    let mut t = Table::new(cfg, &["method", "coordinate", "estimate", "mc_se", "acceptance_rate", "note"]);
    for (k, &alpha) in cfg.alphas.iter().enumerate() {
        if laplace {
            let est = laplace_expectation(&model, &data, &prior, |th| th.as_vector().clone(), alpha)?;
            for (j, v) in est.iter().enumerate() {
                t.push(
                    alpha,
                    vec![
                        "laplace".into(),
                        Cell::from(j + 1),
                        Cell::Num(*v),
                        Cell::Empty,
                        Cell::Empty,
                        "first-order Laplace approximation; error O(1/n), no Monte Carlo error".into(),
                    ],
                );
                println!("alpha {alpha} theta{} = {v:.6} (Laplace)", j + 1);
            }
        } else {
            let chain = run_sampler(&model, &data, &prior, alpha, &sampler_config(cfg, 100 + k as u64))?;
            let e = erpe_of(&chain)?;
            for j in 0..model.dim() {
                t.push(
                    alpha,
                    vec![
                        "mcmc".into(),
                        Cell::from(j + 1),
                        Cell::Num(e.estimate[j]),
                        Cell::Num(e.mc_se[j]),
                        Cell::Num(chain.acceptance_rate),
                        chain.warnings.join("; ").into(),
                    ],
                );
                println!("alpha {alpha} theta{} = {:.6} (MC se {:.2e})", j + 1, e.estimate[j], e.mc_se[j]);
            }
        }
    }
    let path = output_path(cfg, "erpe")?;
    t.write_file(cfg.format, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn are_table(alphas: Option<&[f64]>, check: bool) -> Result<(), CliError> {
    let grid = alphas.unwrap_or(&TABLE_ALPHAS);
    let rows = are_rows(grid)?;
    println!("{:>8} {:>12} {:>12}", "alpha", "ARE_beta(%)", "ARE_sigma(%)");
    for r in &rows {
        println!("{:>8} {:>12.2} {:>12.2}", r.alpha, r.are_beta_percent, r.are_sigma_percent);
    }
    if check {
        let mut worst: f64 = 0.0;
        let mut compared = 0;
        for r in &rows {
            if let Some(k) = TABLE_ALPHAS.iter().position(|a| (a - r.alpha).abs() < 1e-12) {
                worst = worst
                    .max((r.are_beta_percent - TABLE_ARE_BETA[k]).abs())
                    .max((r.are_sigma_percent - TABLE_ARE_SIGMA[k]).abs());
                compared += 1;
            }
        }
        println!("check: {compared} alpha values compared, max deviation {worst:.4}");
        if compared == 0 {
            return Err(CliError::CheckFailed("no alpha on the published grid".into()));
        }
        if worst > 0.01 {
            return Err(CliError::CheckFailed(format!("max deviation {worst:.4} exceeds 0.01")));
        }
    }
    Ok(())
}

fn influence_model(cfg: &ExperimentConfig) -> Result<RegressionModel, CliError> {
    let family = cfg.family()?;
    let design = match &cfg.data {
        Some(d) => Dataset::from_csv_path(&d.path, d.header)?.design().clone(),
        None => cfg.design_matrix(cfg.design.n)?,
    };
    Ok(RegressionModel::new(family, design)?)
}

fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k <= 1 {
        return vec![lo];
    }
    (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
}

pub fn influence(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let s = &cfg.influence;
    let model = influence_model(cfg)?;
    let theta_g = cfg.theta_g(&model)?;
    let spec = TrueDistributionSpec::in_model(theta_g.clone());
    let prior = cfg.prior(model.dim())?;
    let direction = match s.index {
        Some(i) => Direction::One(i),
        None => Direction::All,
    };
    let mc = McConfig {
        draws: s.draws,
        seed: cfg.seed(),
        proposal_inflation: s.proposal_inflation,
    };
    let ts = linspace(s.t_min, s.t_max, s.t_points);

    // One θ grid shared by every α, sized by the widest functional posterior.
    let theta_grid: Option<Vec<Parameter>> = if model.dim() == 1 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let normals = standard_normals(mc.draws, 1, mc.seed);
        for &alpha in &cfg.alphas {
            let ws = functional_posterior_sample(&model, &spec, &prior, alpha, &normals, mc.proposal_inflation)?;
            let (m, _) = ws.expectation(|t| Ok(t.as_vector().clone()))?;
            let (m2, _) = ws.expectation(|t| Ok(t.as_vector().map(|v| v * v)))?;
            let sd = (m2[0] - m[0] * m[0]).max(0.0).sqrt();
            lo = lo.min(m[0] - s.theta_span * sd);
            hi = hi.max(m[0] + s.theta_span * sd);
        }
        Some(linspace(lo, hi, s.theta_points).into_iter().map(|v| Parameter::new(vec![v])).collect())
    } else {
        eprintln!("note: pseudo-influence surfaces are only computed for scalar parameters");
        None
    };

    let mut t = Table::new(cfg, &["kind", "coordinate", "theta", "t", "value", "std_error"]);
    for &alpha in &cfg.alphas {
        let curve = if_curve(&model, &spec, &prior, alpha, &ts, direction, &mc)?;
        for (tv, v) in ts.iter().zip(&curve) {
            for j in 0..model.dim() {
                t.push(
                    alpha,
                    vec!["if".into(), Cell::from(j + 1), Cell::Empty, Cell::Num(*tv), Cell::Num(v.value[j]), Cell::Num(v.std_error[j])],
                );
            }
        }
        if let Some(grid) = &theta_grid {
            let surf = pif(&model, &spec, &prior, alpha, grid, &ts, direction, &mc)?;
            for (a, th) in grid.iter().enumerate() {
                for (b, tv) in ts.iter().enumerate() {
                    t.push(
                        alpha,
                        vec!["pif".into(), Cell::from(1usize), Cell::Num(th[0]), Cell::Num(*tv), Cell::Num(surf.values[(a, b)]), Cell::Empty],
                    );
                }
            }
            let sens = sensitivities(&surf, s.phi_second_derivative)?;
            for (b, tv) in ts.iter().enumerate() {
                t.push(alpha, vec!["gamma".into(), Cell::Empty, Cell::Empty, Cell::Num(*tv), Cell::Num(sens.gamma[b]), Cell::Empty]);
                t.push(alpha, vec!["s".into(), Cell::Empty, Cell::Empty, Cell::Num(*tv), Cell::Num(sens.s[b]), Cell::Empty]);
                t.push(
                    alpha,
                    vec![
                        "pif_mean".into(),
                        Cell::Empty,
                        Cell::Empty,
                        Cell::Num(*tv),
                        Cell::Num(sens.first_order_mean[b]),
                        Cell::Num(surf.centering_se[b]),
                    ],
                );
            }
            t.push(alpha, vec!["gamma_star".into(), Cell::Empty, Cell::Empty, Cell::Empty, Cell::Num(sens.gamma_star), Cell::Empty]);
            t.push(alpha, vec!["s_star".into(), Cell::Empty, Cell::Empty, Cell::Empty, Cell::Num(sens.s_star), Cell::Empty]);
            println!("alpha {alpha}: gamma* = {:.6e}, s* = {:.6e}", sens.gamma_star, sens.s_star);
        }
        let sup = curve.iter().map(|v| v.value.amax()).fold(0.0, f64::max);
        println!("alpha {alpha}: sup |IF| on the t grid = {sup:.6e}");
    }
    let path = output_path(cfg, "influence")?;
    t.write_file(cfg.format, &path)?;
    println!("wrote {} rows to {}", t.len(), path.display());
    Ok(())
}

pub fn breakdown(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let s = &cfg.breakdown;
    let model = influence_model(cfg)?;
    let theta_g = cfg.theta_g(&model)?;
    let prior = cfg.prior(model.dim())?;
    let method = match s.method.as_str() {
        "importance" => BreakdownMethod::ImportanceSampling(McConfig {
            draws: s.draws,
            seed: cfg.seed(),
            proposal_inflation: s.proposal_inflation,
        }),
        "min-divergence" => BreakdownMethod::MinimumDivergence,
        other => return Err(CliError::Config(format!("unknown breakdown method {other:?}"))),
    };
    let mut t = Table::new(cfg, &["epsilon", "magnitude", "shift", "estimate", "std_error", "baseline"]);
    for &alpha in &cfg.alphas {
        let c = breakdown_experiment(&model, &theta_g, &prior, alpha, s.epsilon, &s.magnitudes, &method)?;
        for p in &c.points {
            t.push(
                alpha,
                vec![
                    Cell::Num(c.epsilon),
                    Cell::Num(p.magnitude),
                    Cell::Num(p.shift),
                    Cell::Num(p.estimate),
                    Cell::Num(p.std_error),
                    Cell::Num(c.baseline),
                ],
            );
        }
        println!(
            "alpha {alpha}: shift at largest magnitude {:.6e}, tail relative change {:.3e}",
            c.points.last().map(|p| p.shift).unwrap_or(f64::NAN),
            c.tail_relative_change(3)
        );
    }
    let path = output_path(cfg, "breakdown")?;
    t.write_file(cfg.format, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn bvm(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let family = cfg.family()?;
    let prior_dim = RegressionModel::new(family, cfg.design_matrix(cfg.bvm.n_grid.iter().copied().max().unwrap_or(1).max(2))?)?.dim();
    let prior = cfg.prior(prior_dim)?;
    let mut t = Table::new(cfg, &["n", "replicate", "tv_psi", "tv_psi_hat", "acceptance_rate", "product_approximation"]);
    for (ka, &alpha) in cfg.alphas.iter().enumerate() {
        for &n in &cfg.bvm.n_grid {
            let mut tvs = Vec::new();
            for rep in 0..cfg.bvm.replicates {
                let model = RegressionModel::new(family, cfg.design_matrix(n)?)?;
                let theta_g = cfg.theta_g(&model)?;
                let stream = ((ka as u64) << 40) | ((n as u64) << 16) | rep as u64;
                let mut rng = cfg.rng(1 << 48 | stream);
                let data = model.simulate(&theta_g, &mut rng)?;
                let chain = run_sampler(&model, &data, &prior, alpha, &sampler_config(cfg, 2 << 48 | stream))?;
                let hat = mdpde_fit(&model, &data, alpha, &FitOptions::default())?;
                let (psi, _) = population_sandwich(&model, &theta_g, alpha, &theta_g)?;
                let psi_hat = &hat.neg_hessian / n as f64;
                let a = bvm_distance(&chain.draws, &hat.theta_hat, &psi, n, alpha, BvmScaling::PsiAtThetaG)?;
                let b = bvm_distance(&chain.draws, &hat.theta_hat, &psi_hat, n, alpha, BvmScaling::PsiHatAtThetaHat)?;
                tvs.push(a.tv_estimate);
                t.push(
                    alpha,
                    vec![
                        Cell::from(n),
                        Cell::from(rep),
                        Cell::Num(a.tv_estimate),
                        Cell::Num(b.tv_estimate),
                        Cell::Num(chain.acceptance_rate),
                        Cell::Text(a.product_approximation.to_string()),
                    ],
                );
            }
            tvs.sort_by(|x, y| x.total_cmp(y));
            let med = tvs.get(tvs.len() / 2).copied().unwrap_or(f64::NAN);
            println!("alpha {alpha} n {n}: median tv {med:.4}");
        }
    }
    let path = output_path(cfg, "bvm")?;
    t.write_file(cfg.format, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let (_, data) = cfg.dataset()?;
    let f = std::fs::File::create(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    data.write_csv(std::io::BufWriter::new(f))?;
    println!("wrote {} rows to {}", data.n(), out.display());
    Ok(())
}
