//! Independent non-homogeneous model families.
//!
//! A model assigns every observation index `i` its own density `f_{i,θ}`
//! sharing one parameter vector. The [`InhModel`] trait exposes what the
//! α-likelihood and its derivatives need; [`RegressionModel`] implements it
//! in closed form for normal linear regression (known or unknown σ) and
//! fixed-design logistic regression. User-defined families only have to
//! provide `log_density`; integrals fall back to adaptive quadrature and
//! derivatives to central differences.

use std::f64::consts::PI;
use std::io::Read;
use std::ops::Deref;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::numeric::{fd_gradient, fd_jacobian, log_sum_exp};
use crate::quadrature::{integrate, integrate_vec, QuadratureOptions, Range};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Parameter vector θ.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter(DVector<f64>);

impl Parameter {
    pub fn new(values: Vec<f64>) -> Self {
        Self(DVector::from_vec(values))
    }

    pub fn from_vector(v: DVector<f64>) -> Self {
        Self(v)
    }

    pub fn zeros(p: usize) -> Self {
        Self(DVector::zeros(p))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for Parameter {
    type Target = DVector<f64>;
    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

impl From<DVector<f64>> for Parameter {
    fn from(v: DVector<f64>) -> Self {
        Self(v)
    }
}

impl From<Vec<f64>> for Parameter {
    fn from(v: Vec<f64>) -> Self {
        Self::new(v)
    }
}

/// Responses `x_1..x_n` paired with fixed design rows `z_1..z_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    responses: DVector<f64>,
    design: DMatrix<f64>,
}

impl Dataset {
    pub fn new(responses: DVector<f64>, design: DMatrix<f64>) -> Result<Self> {
        let n = responses.len();
        if n == 0 || design.ncols() == 0 {
            return Err(Error::InvalidData("empty dataset".into()));
        }
        if design.nrows() != n {
            return Err(Error::Dimension(format!(
                "{} responses but {} design rows",
                n,
                design.nrows()
            )));
        }
        if n < design.ncols() {
            return Err(Error::InvalidData(format!(
                "n = {} is smaller than p = {}",
                n,
                design.ncols()
            )));
        }
        if let Some((r, _)) = design
            .row_iter()
            .enumerate()
            .find(|(_, row)| row.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidData(format!("design row {r} is not finite")));
        }
        if let Some(i) = responses.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("response {i} is not finite")));
        }
        Ok(Self { responses, design })
    }

    pub fn n(&self) -> usize {
        self.responses.len()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    pub fn responses(&self) -> &DVector<f64> {
        &self.responses
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn response(&self, i: usize) -> f64 {
        self.responses[i]
    }

    /// Reads a dataset whose first column is the response and remaining columns covariates.
    pub fn from_csv_reader<R: Read>(reader: R, has_header: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(has_header)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut responses = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut width = None;
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() < 2 {
                return Err(Error::Parse {
                    line,
                    column: 1,
                    message: "need a response and at least one covariate".into(),
                });
            }
            match width {
                None => width = Some(record.len()),
                Some(w) if w != record.len() => {
                    return Err(Error::Parse {
                        line,
                        column: record.len().min(w) + 1,
                        message: format!("expected {w} fields, found {}", record.len()),
                    })
                }
                _ => {}
            }
            let mut values = Vec::with_capacity(record.len());
            for (c, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    column: c + 1,
                    message: format!("non-numeric value {field:?}"),
                })?;
                values.push(v);
            }
            responses.push(values[0]);
            rows.push(values[1..].to_vec());
        }
        let n = rows.len();
        let p = width.map(|w| w - 1).unwrap_or(0);
        let design = DMatrix::from_fn(n, p, |r, c| rows[r][c]);
        Self::new(DVector::from_vec(responses), design)
    }

    pub fn from_csv_path(path: &Path, has_header: bool) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, has_header)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["response".to_string()];
        header.extend((0..self.p()).map(|j| format!("z{}", j + 1)));
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![format!("{}", self.responses[i])];
            rec.extend(self.design.row(i).iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Support of an observation, with Lebesgue measure for continuous and counting measure for binary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    Continuous { lower: f64, upper: f64 },
    Binary,
}

/// An INH parametric family `{f_{i,θ}}`.
pub trait InhModel: Send + Sync {
    fn n_obs(&self) -> usize;
    fn dim(&self) -> usize;

    /// Domain check on θ (length, finiteness, positivity of scale coordinates).
    fn check_parameter(&self, theta: &Parameter) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "parameter has length {}, model expects {}",
                theta.len(),
                self.dim()
            )));
        }
        if !theta.is_finite() {
            return Err(Error::Domain("parameter has non-finite coordinates".into()));
        }
        Ok(())
    }

    fn support(&self, i: usize) -> Support;

    /// Location and scale hint used to map unbounded supports for quadrature.
    fn location_hint(&self, _i: usize, _theta: &Parameter) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn log_density(&self, i: usize, x: f64, theta: &Parameter) -> Result<f64>;

    fn grad_log_density(&self, i: usize, x: f64, theta: &Parameter) -> Result<DVector<f64>> {
        self.check_parameter(theta)?;
        Ok(fd_gradient(
            |t| {
                self.log_density(i, x, &Parameter::from_vector(t.clone()))
                    .unwrap_or(f64::NAN)
            },
            theta,
            1e-6,
        ))
    }

    fn hess_log_density(&self, i: usize, x: f64, theta: &Parameter) -> Result<DMatrix<f64>> {
        self.check_parameter(theta)?;
        Ok(fd_jacobian(
            |t| {
                self.grad_log_density(i, x, &Parameter::from_vector(t.clone()))
                    .unwrap_or_else(|_| DVector::from_element(t.len(), f64::NAN))
            },
            theta,
            1e-5,
        ))
    }

    /// `log ∫ f_{i,θ}^{1+α}`.
    fn log_integral_power(&self, i: usize, theta: &Parameter, alpha: f64) -> Result<f64> {
        self.check_parameter(theta)?;
        match self.support(i) {
            Support::Binary => {
                let terms = [
                    (1.0 + alpha) * self.log_density(i, 0.0, theta)?,
                    (1.0 + alpha) * self.log_density(i, 1.0, theta)?,
                ];
                Ok(log_sum_exp(&terms))
            }
            Support::Continuous { lower, upper } => {
                let (c, s) = self.location_hint(i, theta);
                let v = integrate(
                    |x| {
                        self.log_density(i, x, theta)
                            .map(|l| ((1.0 + alpha) * l).exp())
                            .unwrap_or(0.0)
                    },
                    Range::new(lower, upper).with_hint(c, s),
                    &QuadratureOptions::default(),
                )?;
                Ok(v.ln())
            }
        }
    }

    /// Gradient and Hessian of `∫ f_{i,θ}^{1+α}` in θ.
    fn integral_power_derivatives(
        &self,
        i: usize,
        theta: &Parameter,
        alpha: f64,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_parameter(theta)?;
        let f = |t: &DVector<f64>| {
            self.log_integral_power(i, &Parameter::from_vector(t.clone()), alpha)
                .map(f64::exp)
                .unwrap_or(f64::NAN)
        };
        let g = fd_gradient(f, theta, 1e-5);
        let h = fd_jacobian(|t| fd_gradient(f, t, 1e-4), theta, 1e-4);
        Ok((g, h))
    }

    /// `log ∫ f_{i,θ}^α dG_i` with `G_i` the model distribution at `theta_g`.
    fn log_expected_density_power(
        &self,
        i: usize,
        theta: &Parameter,
        alpha: f64,
        theta_g: &Parameter,
    ) -> Result<f64> {
        self.check_parameter(theta)?;
        self.check_parameter(theta_g)?;
        match self.support(i) {
            Support::Binary => {
                let terms = [
                    alpha * self.log_density(i, 0.0, theta)? + self.log_density(i, 0.0, theta_g)?,
                    alpha * self.log_density(i, 1.0, theta)? + self.log_density(i, 1.0, theta_g)?,
                ];
                Ok(log_sum_exp(&terms))
            }
            Support::Continuous { lower, upper } => {
                let (c, s) = self.location_hint(i, theta_g);
                let v = integrate(
                    |x| match (self.log_density(i, x, theta), self.log_density(i, x, theta_g)) {
                        (Ok(a), Ok(b)) => (alpha * a + b).exp(),
                        _ => 0.0,
                    },
                    Range::new(lower, upper).with_hint(c, s),
                    &QuadratureOptions::default(),
                )?;
                Ok(v.ln())
            }
        }
    }

    /// `∫ log f_{i,θ} dG_i` with `G_i` the model distribution at `theta_g`.
    fn expected_log_density(&self, i: usize, theta: &Parameter, theta_g: &Parameter) -> Result<f64> {
        self.check_parameter(theta)?;
        self.check_parameter(theta_g)?;
        match self.support(i) {
            Support::Binary => {
                let mut acc = 0.0;
                for x in [0.0, 1.0] {
                    let g = self.log_density(i, x, theta_g)?.exp();
                    if g > 0.0 {
                        acc += g * self.log_density(i, x, theta)?;
                    }
                }
                Ok(acc)
            }
            Support::Continuous { lower, upper } => {
                let (c, s) = self.location_hint(i, theta_g);
                integrate(
                    |x| match (self.log_density(i, x, theta), self.log_density(i, x, theta_g)) {
                        (Ok(a), Ok(b)) if b.exp() > 0.0 => a * b.exp(),
                        _ => 0.0,
                    },
                    Range::new(lower, upper).with_hint(c, s),
                    &QuadratureOptions::default(),
                )
            }
        }
    }

    /// Per-index contributions `(Ψ_i, Ω_i)` when the truth equals the model at θ.
    fn closed_form_sandwich_terms(
        &self,
        _i: usize,
        _theta: &Parameter,
        _alpha: f64,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        None
    }

    fn sample_response(&self, _i: usize, _theta: &Parameter, _rng: &mut dyn RngCore) -> Result<f64> {
        Err(Error::Unsupported("model does not provide a sampler".into()))
    }

    /// Whether third θ-derivatives of `V_i` are bounded uniformly in x.
    fn has_third_derivative_bound(&self) -> bool {
        false
    }

    /// Starting point for optimization on `data`.
    fn initial_guess(&self, _data: &Dataset) -> Parameter {
        Parameter::zeros(self.dim())
    }

    fn validate_response(&self, i: usize, x: f64) -> Result<()> {
        match self.support(i) {
            Support::Binary if x != 0.0 && x != 1.0 => Err(Error::InvalidData(format!(
                "response {i} = {x} is not binary"
            ))),
            Support::Continuous { lower, upper } if !(x >= lower && x <= upper) => Err(
                Error::InvalidData(format!("response {i} = {x} outside support")),
            ),
            _ => Ok(()),
        }
    }
}

fn check_index<M: InhModel + ?Sized>(model: &M, i: usize) -> Result<()> {
    if i >= model.n_obs() {
        return Err(Error::Index {
            index: i,
            len: model.n_obs(),
        });
    }
    Ok(())
}

fn check_alpha_positive(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    Ok(())
}

/// `f_{i,θ}(x)^α`.
pub fn density_power<M: InhModel + ?Sized>(
    model: &M,
    i: usize,
    x: f64,
    theta: &Parameter,
    alpha: f64,
) -> Result<f64> {
    check_index(model, i)?;
    model.check_parameter(theta)?;
    if alpha == 0.0 {
        return Ok(1.0);
    }
    Ok((alpha * model.log_density(i, x, theta)?).exp())
}

/// `∫ f_{i,θ}^{1+α}`.
pub fn integral_power<M: InhModel + ?Sized>(
    model: &M,
    i: usize,
    theta: &Parameter,
    alpha: f64,
) -> Result<f64> {
    check_index(model, i)?;
    model.check_parameter(theta)?;
    Ok(model.log_integral_power(i, theta, alpha)?.exp())
}

/// `V_i(x, θ) = ∫ f^{1+α} − (1 + 1/α) f^α(x)`.
pub fn v_term<M: InhModel + ?Sized>(
    model: &M,
    i: usize,
    x: f64,
    theta: &Parameter,
    alpha: f64,
) -> Result<f64> {
    check_alpha_positive(alpha)?;
    check_index(model, i)?;
    model.check_parameter(theta)?;
    let integral = model.log_integral_power(i, theta, alpha)?.exp();
    let fa = (alpha * model.log_density(i, x, theta)?).exp();
    Ok(integral - (1.0 + 1.0 / alpha) * fa)
}

/// θ-gradient of `V_i`.
pub fn grad_v<M: InhModel + ?Sized>(
    model: &M,
    i: usize,
    x: f64,
    theta: &Parameter,
    alpha: f64,
) -> Result<DVector<f64>> {
    check_alpha_positive(alpha)?;
    let (g, _) = q_term_derivatives(model, i, x, theta, alpha, false)?;
    Ok(-(1.0 + alpha) * g)
}

/// θ-Hessian of `V_i`.
pub fn hess_v<M: InhModel + ?Sized>(
    model: &M,
    i: usize,
    x: f64,
    theta: &Parameter,
    alpha: f64,
) -> Result<DMatrix<f64>> {
    check_alpha_positive(alpha)?;
    let (_, h) = q_term_derivatives(model, i, x, theta, alpha, true)?;
    Ok(-(1.0 + alpha) * h.expect("hessian requested"))
}

/// Derivatives of one α-likelihood term `q_i = f^α/α − ∫f^{1+α}/(1+α) − 1/α`
/// (the log-density when α = 0). Uses `∇q = f^α ∇log f − ∇I/(1+α)` so that
/// the α = 0 branch needs no special casing.
pub fn q_term_derivatives<M: InhModel + ?Sized>(
    model: &M,
    i: usize,
    x: f64,
    theta: &Parameter,
    alpha: f64,
    with_hessian: bool,
) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
    check_index(model, i)?;
    model.check_parameter(theta)?;
    let score = model.grad_log_density(i, x, theta)?;
    let fa = if alpha == 0.0 {
        1.0
    } else {
        (alpha * model.log_density(i, x, theta)?).exp()
    };
    if alpha == 0.0 {
        let h = if with_hessian {
            Some(model.hess_log_density(i, x, theta)?)
        } else {
            None
        };
        return Ok((score, h));
    }
    let (gi, hi) = model.integral_power_derivatives(i, theta, alpha)?;
    let grad = &score * fa - &gi / (1.0 + alpha);
    let hess = if with_hessian {
        let hl = model.hess_log_density(i, x, theta)?;
        Some((&score * score.transpose() * alpha + hl) * fa - hi / (1.0 + alpha))
    } else {
        None
    };
    Ok((grad, hess))
}

/// Built-in regression families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    LinearKnownSigma { sigma: f64 },
    LinearUnknownSigma,
    Logistic,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::LinearKnownSigma { .. } => "linear-known-sigma",
            Family::LinearUnknownSigma => "linear-unknown-sigma",
            Family::Logistic => "logistic",
        }
    }
}

/// Fixed-design regression model with closed-form integrals and derivatives.
#[derive(Debug, Clone)]
pub struct RegressionModel {
    family: Family,
    design: DMatrix<f64>,
}

impl RegressionModel {
    pub fn new(family: Family, design: DMatrix<f64>) -> Result<Self> {
        if let Family::LinearKnownSigma { sigma } = family {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
            }
        }
        if design.nrows() == 0 || design.ncols() == 0 {
            return Err(Error::InvalidData("empty design".into()));
        }
        if design.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("design has non-finite entries".into()));
        }
        Ok(Self { family, design })
    }

    /// Builds the model for `data`, validating responses against the family's support.
    pub fn for_data(family: Family, data: &Dataset) -> Result<Self> {
        let model = Self::new(family, data.design().clone())?;
        for i in 0..data.n() {
            model.validate_response(i, data.response(i))?;
        }
        Ok(model)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    /// Number of regression coefficients.
    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    fn linear_predictor(&self, i: usize, theta: &Parameter) -> f64 {
        let p = self.p();
        let row = self.design.row(i);
        let mut acc = 0.0;
        for j in 0..p {
            acc += row[j] * theta[j];
        }
        acc
    }

    fn sigma(&self, theta: &Parameter) -> f64 {
        match self.family {
            Family::LinearKnownSigma { sigma } => sigma,
            Family::LinearUnknownSigma => theta[self.p()],
            Family::Logistic => f64::NAN,
        }
    }

    fn z(&self, i: usize) -> DVector<f64> {
        self.design.row(i).transpose()
    }

    /// Pads a β-block to the full parameter dimension.
    fn embed_beta(&self, v: DVector<f64>) -> DVector<f64> {
        if self.dim() == self.p() {
            v
        } else {
            let mut out = DVector::zeros(self.dim());
            out.rows_mut(0, self.p()).copy_from(&v);
            out
        }
    }

    /// Samples a dataset from the model at `theta` on this design.
    pub fn simulate(&self, theta: &Parameter, rng: &mut dyn RngCore) -> Result<Dataset> {
        self.check_parameter(theta)?;
        let y = (0..self.n_obs())
            .map(|i| self.sample_response(i, theta, rng))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(DVector::from_vec(y), self.design.clone())
    }
}

/// `ζ_α = (2π)^{-α/2} σ^{-(α+2)} (1+α)^{-3/2}`.
pub fn zeta(alpha: f64, sigma: f64) -> f64 {
    (-0.5 * alpha * LN_2PI).exp() * sigma.powf(-(alpha + 2.0)) * (1.0 + alpha).powf(-1.5)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Success probability of the logistic model at linear predictor `eta`.
pub fn logistic_probability(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

impl InhModel for RegressionModel {
    fn n_obs(&self) -> usize {
        self.design.nrows()
    }

    fn dim(&self) -> usize {
        match self.family {
            Family::LinearUnknownSigma => self.p() + 1,
            _ => self.p(),
        }
    }

    fn check_parameter(&self, theta: &Parameter) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "parameter has length {}, {} model expects {}",
                theta.len(),
                self.family.name(),
                self.dim()
            )));
        }
        if !theta.is_finite() {
            return Err(Error::Domain("parameter has non-finite coordinates".into()));
        }
        if let Family::LinearUnknownSigma = self.family {
            let s = theta[self.p()];
            if s <= 0.0 {
                return Err(Error::Domain(format!("scale must be positive, got {s}")));
            }
        }
        Ok(())
    }

    fn support(&self, _i: usize) -> Support {
        match self.family {
            Family::Logistic => Support::Binary,
            _ => Support::Continuous {
                lower: f64::NEG_INFINITY,
                upper: f64::INFINITY,
            },
        }
    }

    fn location_hint(&self, i: usize, theta: &Parameter) -> (f64, f64) {
        match self.family {
            Family::Logistic => (0.5, 0.5),
            _ => (self.linear_predictor(i, theta), self.sigma(theta)),
        }
    }

    fn log_density(&self, i: usize, x: f64, theta: &Parameter) -> Result<f64> {
        self.check_parameter(theta)?;
        let eta = self.linear_predictor(i, theta);
        match self.family {
            Family::Logistic => {
                if x == 1.0 {
                    Ok(-softplus(-eta))
                } else if x == 0.0 {
                    Ok(-softplus(eta))
                } else {
                    Ok(f64::NEG_INFINITY)
                }
            }
            _ => {
                let s = self.sigma(theta);
                let r = (x - eta) / s;
                Ok(-0.5 * LN_2PI - s.ln() - 0.5 * r * r)
            }
        }
    }

    fn grad_log_density(&self, i: usize, x: f64, theta: &Parameter) -> Result<DVector<f64>> {
        self.check_parameter(theta)?;
        let eta = self.linear_predictor(i, theta);
        let z = self.z(i);
        Ok(match self.family {
            Family::Logistic => z * (x - logistic_probability(eta)),
            Family::LinearKnownSigma { sigma } => z * ((x - eta) / (sigma * sigma)),
            Family::LinearUnknownSigma => {
                let s = self.sigma(theta);
                let r = x - eta;
                let mut g = self.embed_beta(z * (r / (s * s)));
                g[self.p()] = -1.0 / s + r * r / (s * s * s);
                g
            }
        })
    }

    fn hess_log_density(&self, i: usize, x: f64, theta: &Parameter) -> Result<DMatrix<f64>> {
        self.check_parameter(theta)?;
        let eta = self.linear_predictor(i, theta);
        let z = self.z(i);
        let zz = &z * z.transpose();
        Ok(match self.family {
            Family::Logistic => {
                let pi = logistic_probability(eta);
                zz * (-pi * (1.0 - pi))
            }
            Family::LinearKnownSigma { sigma } => zz * (-1.0 / (sigma * sigma)),
            Family::LinearUnknownSigma => {
                let p = self.p();
                let s = self.sigma(theta);
                let r = x - eta;
                let mut h = DMatrix::zeros(p + 1, p + 1);
                h.view_mut((0, 0), (p, p)).copy_from(&(zz * (-1.0 / (s * s))));
                let cross = z * (-2.0 * r / (s * s * s));
                for j in 0..p {
                    h[(j, p)] = cross[j];
                    h[(p, j)] = cross[j];
                }
                h[(p, p)] = 1.0 / (s * s) - 3.0 * r * r / (s * s * s * s);
                h
            }
        })
    }

    fn log_integral_power(&self, i: usize, theta: &Parameter, alpha: f64) -> Result<f64> {
        self.check_parameter(theta)?;
        match self.family {
            Family::Logistic => {
                let eta = self.linear_predictor(i, theta);
                let a = 1.0 + alpha;
                Ok(log_sum_exp(&[-a * softplus(-eta), -a * softplus(eta)]))
            }
            _ => {
                let s = self.sigma(theta);
                Ok(-0.5 * alpha * LN_2PI - alpha * s.ln() - 0.5 * (1.0 + alpha).ln())
            }
        }
    }

    fn integral_power_derivatives(
        &self,
        i: usize,
        theta: &Parameter,
        alpha: f64,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_parameter(theta)?;
        let d = self.dim();
        match self.family {
            Family::LinearKnownSigma { .. } => Ok((DVector::zeros(d), DMatrix::zeros(d, d))),
            Family::LinearUnknownSigma => {
                let p = self.p();
                let s = self.sigma(theta);
                let integral = self.log_integral_power(i, theta, alpha)?.exp();
                let mut g = DVector::zeros(d);
                let mut h = DMatrix::zeros(d, d);
                g[p] = -alpha * integral / s;
                h[(p, p)] = alpha * (alpha + 1.0) * integral / (s * s);
                Ok((g, h))
            }
            Family::Logistic => {
                let eta = self.linear_predictor(i, theta);
                let pi = logistic_probability(eta);
                let q = logistic_probability(-eta);
                let w = pi * q;
                let pa = pi.powf(alpha);
                let qa = q.powf(alpha);
                let d1 = (1.0 + alpha) * (pa - qa) * w;
                let d2 = (1.0 + alpha)
                    * (alpha * (pi * pa * q * q + q * qa * pi * pi) + (pa - qa) * w * (q - pi));
                let z = self.z(i);
                Ok((&z * d1, &z * z.transpose() * d2))
            }
        }
    }

    fn log_expected_density_power(
        &self,
        i: usize,
        theta: &Parameter,
        alpha: f64,
        theta_g: &Parameter,
    ) -> Result<f64> {
        self.check_parameter(theta)?;
        self.check_parameter(theta_g)?;
        match self.family {
            Family::Logistic => {
                let eta = self.linear_predictor(i, theta);
                let eg = self.linear_predictor(i, theta_g);
                Ok(log_sum_exp(&[
                    -alpha * softplus(-eta) - softplus(-eg),
                    -alpha * softplus(eta) - softplus(eg),
                ]))
            }
            _ => {
                let s = self.sigma(theta);
                let sg = self.sigma(theta_g);
                let d = self.linear_predictor(i, theta) - self.linear_predictor(i, theta_g);
                let s2 = s * s;
                let v = s2 + alpha * sg * sg;
                Ok(-0.5 * alpha * (LN_2PI + s2.ln()) - 0.5 * (v / s2).ln()
                    - alpha * d * d / (2.0 * v))
            }
        }
    }

    fn expected_log_density(&self, i: usize, theta: &Parameter, theta_g: &Parameter) -> Result<f64> {
        self.check_parameter(theta)?;
        self.check_parameter(theta_g)?;
        match self.family {
            Family::Logistic => {
                let eta = self.linear_predictor(i, theta);
                let pg = logistic_probability(self.linear_predictor(i, theta_g));
                Ok(-pg * softplus(-eta) - (1.0 - pg) * softplus(eta))
            }
            _ => {
                let s = self.sigma(theta);
                let sg = self.sigma(theta_g);
                let d = self.linear_predictor(i, theta) - self.linear_predictor(i, theta_g);
                Ok(-0.5 * LN_2PI - s.ln() - (sg * sg + d * d) / (2.0 * s * s))
            }
        }
    }

    fn closed_form_sandwich_terms(
        &self,
        i: usize,
        theta: &Parameter,
        alpha: f64,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_parameter(theta).ok()?;
        let z = self.z(i);
        let zz = &z * z.transpose();
        match self.family {
            Family::LinearKnownSigma { sigma } => {
                Some((&zz * zeta(alpha, sigma), zz * zeta(2.0 * alpha, sigma)))
            }
            Family::LinearUnknownSigma => {
                let p = self.p();
                let s = self.sigma(theta);
                let mut psi = DMatrix::zeros(p + 1, p + 1);
                let mut omega = DMatrix::zeros(p + 1, p + 1);
                let za = zeta(alpha, s);
                psi.view_mut((0, 0), (p, p)).copy_from(&(&zz * za));
                psi[(p, p)] = za * (2.0 + alpha * alpha) / (1.0 + alpha);
                omega
                    .view_mut((0, 0), (p, p))
                    .copy_from(&(&zz * zeta(2.0 * alpha, s)));
                let k2 = (-alpha * LN_2PI).exp() * s.powf(-2.0 * alpha);
                omega[(p, p)] = k2 / (s * s)
                    * ((2.0 + 4.0 * alpha * alpha) * (1.0 + 2.0 * alpha).powf(-2.5)
                        - alpha * alpha * (1.0 + alpha).powi(-3));
                Some((psi, omega))
            }
            Family::Logistic => {
                let eta = self.linear_predictor(i, theta);
                let pi = logistic_probability(eta);
                let q = logistic_probability(-eta);
                let w = pi * q;
                let a = pi.powf(alpha) * q + pi * q.powf(alpha);
                Some((&zz * (w * a), zz * (w * a * a)))
            }
        }
    }

    fn sample_response(&self, i: usize, theta: &Parameter, rng: &mut dyn RngCore) -> Result<f64> {
        self.check_parameter(theta)?;
        let eta = self.linear_predictor(i, theta);
        Ok(match self.family {
            Family::Logistic => {
                let u: f64 = rand::Rng::random(rng);
                if u < logistic_probability(eta) {
                    1.0
                } else {
                    0.0
                }
            }
            _ => {
                let e: f64 = StandardNormal.sample(rng);
                eta + self.sigma(theta) * e
            }
        })
    }

    fn has_third_derivative_bound(&self) -> bool {
        true
    }

    fn initial_guess(&self, data: &Dataset) -> Parameter {
        match self.family {
            Family::Logistic => Parameter::zeros(self.dim()),
            _ => least_squares_start(data, self.dim() > self.p()),
        }
    }
}

/// Least-squares coefficients, with the residual standard deviation appended when `with_scale`.
pub fn least_squares_start(data: &Dataset, with_scale: bool) -> Parameter {
    let p = data.p();
    let z = data.design();
    let dim = if with_scale { p + 1 } else { p };
    let mut theta = DVector::zeros(dim);
    if with_scale {
        theta[p] = 1.0;
    }
    if let Some(chol) = (z.transpose() * z).cholesky() {
        let beta = chol.solve(&(z.transpose() * data.responses()));
        theta.rows_mut(0, p).copy_from(&beta);
        if with_scale {
            let resid = data.responses() - z * &beta;
            let dof = data.n().saturating_sub(p).max(1) as f64;
            let s = (resid.norm_squared() / dof).sqrt();
            if s > 0.0 && s.is_finite() {
                theta[p] = s;
            }
        }
    }
    Parameter::from_vector(theta)
}

/// Design diagnostics behind the regularity conditions on fixed covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignConditionReport {
    pub max_abs_entry: f64,
    /// Smallest eigenvalue of `n⁻¹ZᵀZ`.
    pub min_eigenvalue_scaled: f64,
    /// `max_i z_iᵀ(ZᵀZ)⁻¹z_i`; infinite when `ZᵀZ` is singular.
    pub max_leverage: f64,
    pub full_column_rank: bool,
}

/// Relative eigenvalue threshold for the rank decision.
pub const RANK_TOLERANCE: f64 = 1e-12;

pub fn check_design_conditions(z: &DMatrix<f64>) -> Result<DesignConditionReport> {
    let (n, p) = z.shape();
    if n == 0 || p == 0 {
        return Err(Error::InvalidData("design matrix is empty".into()));
    }
    let max_abs_entry = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gram = z.transpose() * z;
    let ev = linalg::sym_eigenvalues(&(&gram / n as f64));
    let largest = ev.last().copied().unwrap_or(0.0);
    let smallest = ev.first().copied().unwrap_or(0.0);
    let full_column_rank = n >= p && largest > 0.0 && smallest > RANK_TOLERANCE * largest;
    let min_eigenvalue_scaled = if full_column_rank { smallest } else { smallest.max(0.0) };
    let max_leverage = if full_column_rank {
        match linalg::spd_inverse(&gram) {
            Ok(inv) => (0..n)
                .map(|i| {
                    let zi = z.row(i).transpose();
                    (zi.transpose() * &inv * &zi)[(0, 0)]
                })
                .fold(0.0f64, f64::max),
            Err(_) => f64::INFINITY,
        }
    } else {
        f64::INFINITY
    };
    Ok(DesignConditionReport {
        max_abs_entry,
        min_eigenvalue_scaled,
        max_leverage,
        full_column_rank,
    })
}

/// Density of a normal distribution, exposed for oracles and examples.
pub fn normal_density(x: f64, mean: f64, sd: f64) -> f64 {
    let r = (x - mean) / sd;
    (-0.5 * r * r).exp() / (sd * (2.0 * PI).sqrt())
}

/// Integrates `∫ h(x) f_{i,θ}(x) dx` (or the two-point sum) for a vector-valued `h`.
pub fn model_expectation<M, H>(
    model: &M,
    i: usize,
    theta: &Parameter,
    h: H,
) -> Result<Vec<f64>>
where
    M: InhModel + ?Sized,
    H: Fn(f64) -> Vec<f64>,
{
    match model.support(i) {
        Support::Binary => {
            let p1 = model.log_density(i, 1.0, theta)?.exp();
            let h0 = h(0.0);
            let h1 = h(1.0);
            Ok(h0
                .iter()
                .zip(h1.iter())
                .map(|(a, b)| (1.0 - p1) * a + p1 * b)
                .collect())
        }
        Support::Continuous { lower, upper } => {
            let (c, s) = model.location_hint(i, theta);
            let dim = h(c).len();
            integrate_vec(
                |x| {
                    let w = model.log_density(i, x, theta).map(f64::exp).unwrap_or(0.0);
                    if w == 0.0 {
                        vec![0.0; dim]
                    } else {
                        h(x).into_iter().map(|v| v * w).collect()
                    }
                },
                Range::new(lower, upper).with_hint(c, s),
                &QuadratureOptions::default(),
            )
            .map(|r| r.value)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_point(family: Family, z: f64) -> RegressionModel {
        RegressionModel::new(family, DMatrix::from_element(1, 1, z)).unwrap()
    }

    #[test]
    fn v_term_linear_example() {
        let m = one_point(Family::LinearKnownSigma { sigma: 1.0 }, 1.0);
        let v = v_term(&m, 0, 0.0, &Parameter::new(vec![0.0]), 1.0).unwrap();
        let c = (2.0 * PI).powf(-0.5);
        let expected = c * 0.5f64.sqrt() - 2.0 * c;
        assert!((v - expected).abs() < 1e-12);
        assert!((v - (-0.515_790)).abs() < 1e-6);
        let quad = integrate(
            |x| normal_density(x, 0.0, 1.0).powi(2),
            Range::real_line(),
            &Default::default(),
        )
        .unwrap();
        assert!((quad - 2.0 * (v + 2.0 * c) / 2.0).abs() < 1e-10);
    }

    #[test]
    fn v_term_logistic_symmetric() {
        let m = one_point(Family::Logistic, 0.0);
        for b in [-3.0, 0.0, 7.5] {
            let v = v_term(&m, 0, 1.0, &Parameter::new(vec![b]), 1.0).unwrap();
            assert!((v + 0.5).abs() < 1e-14);
            let g = grad_v(&m, 0, 1.0, &Parameter::new(vec![b]), 1.0).unwrap();
            assert_eq!(g[0], 0.0);
        }
    }

    #[test]
    fn grad_v_vanishes_at_zero_residual() {
        let m = RegressionModel::new(
            Family::LinearKnownSigma { sigma: 1.3 },
            DMatrix::from_row_slice(1, 2, &[1.0, -0.4]),
        )
        .unwrap();
        let theta = Parameter::new(vec![0.7, 2.0]);
        let x = 0.7 - 0.8;
        let g = grad_v(&m, 0, x, &theta, 0.5).unwrap();
        assert!(g.norm() < 1e-15);
    }

    #[test]
    fn errors_on_bad_index_and_scale() {
        let m = one_point(Family::LinearUnknownSigma, 1.0);
        let bad = Parameter::new(vec![0.0, -1.0]);
        assert!(matches!(v_term(&m, 0, 0.0, &bad, 0.5), Err(Error::Domain(_))));
        let ok = Parameter::new(vec![0.0, 1.0]);
        assert!(matches!(v_term(&m, 3, 0.0, &ok, 0.5), Err(Error::Index { .. })));
        assert!(v_term(&m, 0, 0.0, &ok, 0.0).is_err());
    }

    #[test]
    fn design_identity_and_intercept() {
        let r = check_design_conditions(&DMatrix::identity(2, 2)).unwrap();
        assert!((r.min_eigenvalue_scaled - 0.5).abs() < 1e-15);
        assert!((r.max_leverage - 1.0).abs() < 1e-14);
        assert!(r.full_column_rank);

        let r = check_design_conditions(&DMatrix::from_element(4, 1, 1.0)).unwrap();
        assert!((r.min_eigenvalue_scaled - 1.0).abs() < 1e-15);
        assert!((r.max_leverage - 0.25).abs() < 1e-15);
    }

    #[test]
    fn duplicated_or_zero_columns_are_rank_deficient() {
        let z = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let r = check_design_conditions(&z).unwrap();
        assert!(!r.full_column_rank);
        let z = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
        assert!(!check_design_conditions(&z).unwrap().full_column_rank);
        let wide = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!(!check_design_conditions(&wide).unwrap().full_column_rank);
    }

    #[test]
    fn logistic_probabilities_sum_to_one() {
        let m = RegressionModel::new(
            Family::Logistic,
            DMatrix::from_row_slice(3, 1, &[-40.0, 0.3, 25.0]),
        )
        .unwrap();
        let theta = Parameter::new(vec![1.7]);
        for i in 0..3 {
            let p0 = m.log_density(i, 0.0, &theta).unwrap().exp();
            let p1 = m.log_density(i, 1.0, &theta).unwrap().exp();
            assert!(p1 > 0.0 && p1 < 1.0 || (p1 - 1.0).abs() < 1e-15);
            assert!((p0 + p1 - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn csv_round_trip_and_parse_errors() {
        let text = "y,z1,z2\n1.5,1,0.2\n-0.3,1,1.1\n2.0,1,-0.7\n";
        let d = Dataset::from_csv_reader(text.as_bytes(), true).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.p(), 2);
        assert_eq!(d.design()[(1, 1)], 1.1);

        let bad = "1.5,1,0.2\n-0.3,abc,1.1\n";
        match Dataset::from_csv_reader(bad.as_bytes(), false) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(column, 2);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let nonbinary = Dataset::from_csv_reader("0.5,1\n1,2\n".as_bytes(), false).unwrap();
        assert!(RegressionModel::for_data(Family::Logistic, &nonbinary).is_err());
    }

    #[test]
    fn simulate_is_seeded() {
        let m = RegressionModel::new(
            Family::LinearUnknownSigma,
            DMatrix::from_fn(5, 1, |i, _| i as f64),
        )
        .unwrap();
        let theta = Parameter::new(vec![0.5, 2.0]);
        let a = m.simulate(&theta, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = m.simulate(&theta, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
    }
}
