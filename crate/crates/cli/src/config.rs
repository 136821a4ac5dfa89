//! Experiment configuration.
//!
//! Configs are TOML files with one section per concern. Every field except
//! `seed` has a default, and command-line flags override file values. The
//! config hash is the SHA-256 of the resolved config serialized as JSON
//! (output directory excluded), so identical experiments share a hash no
//! matter where their output goes.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rposterior::posterior::Prior;
use rposterior::{Dataset, Family, Parameter, RegressionModel};

use crate::CliError;

/// Environment variable that replaces the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "RPOSTERIOR_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrVec {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl ScalarOrVec {
    fn expand(&self, dim: usize, what: &str) -> Result<Vec<f64>, CliError> {
        match self {
            Self::Scalar(v) => Ok(vec![*v; dim]),
            Self::Vector(v) if v.len() == dim => Ok(v.clone()),
            Self::Vector(v) => Err(CliError::Config(format!(
                "{what} has {} entries, the parameter has {dim}",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// `linear`, `linear-unknown-sigma` or `logistic`.
    pub family: String,
    /// Known error scale for `linear`.
    pub sigma: f64,
    /// Data-generating parameter for simulated data.
    pub theta_g: Option<Vec<f64>>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            family: "linear".into(),
            sigma: 1.0,
            theta_g: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
    #[serde(default = "yes")]
    pub header: bool,
}

fn yes() -> bool {
    true
}

/// Fixed design used when data are simulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignSection {
    pub n: usize,
    pub intercept: bool,
    /// Number of normal covariate columns.
    pub covariates: usize,
    pub covariate_mean: f64,
    pub covariate_sd: f64,
}

impl Default for DesignSection {
    fn default() -> Self {
        Self {
            n: 100,
            intercept: true,
            covariates: 1,
            covariate_mean: 0.0,
            covariate_sd: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSection {
    /// `gaussian`, `uniform` or `flat`.
    pub kind: String,
    pub mean: ScalarOrVec,
    pub sd: ScalarOrVec,
    pub lower: ScalarOrVec,
    pub upper: ScalarOrVec,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self {
            kind: "gaussian".into(),
            mean: ScalarOrVec::Scalar(0.0),
            sd: ScalarOrVec::Scalar(10.0),
            lower: ScalarOrVec::Scalar(-100.0),
            upper: ScalarOrVec::Scalar(100.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub chain_length: usize,
    pub burn_in: usize,
    pub thinning: usize,
    /// Multiplier on the automatic proposal covariance's square root.
    pub scale: Option<f64>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            chain_length: 20_000,
            burn_in: 2_000,
            thinning: 1,
            scale: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InfluenceSection {
    pub t_min: f64,
    pub t_max: f64,
    pub t_points: usize,
    /// Contaminate only this observation; all observations when absent.
    pub index: Option<usize>,
    pub draws: usize,
    pub proposal_inflation: f64,
    /// θ grid for pseudo-influence surfaces, as half-width in posterior sds.
    pub theta_span: f64,
    pub theta_points: usize,
    /// `φ''(1)` of the divergence used for the second-order sensitivity.
    pub phi_second_derivative: f64,
}

impl Default for InfluenceSection {
    fn default() -> Self {
        Self {
            t_min: -20.0,
            t_max: 20.0,
            t_points: 41,
            index: None,
            draws: 50_000,
            proposal_inflation: 1.5,
            theta_span: 5.0,
            theta_points: 41,
            phi_second_derivative: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BreakdownSection {
    pub epsilon: f64,
    pub magnitudes: Vec<f64>,
    /// `importance` or `min-divergence`.
    pub method: String,
    pub draws: usize,
    pub proposal_inflation: f64,
}

impl Default for BreakdownSection {
    fn default() -> Self {
        Self {
            epsilon: 0.3,
            magnitudes: (1..=6).map(|k| 10f64.powi(k)).collect(),
            method: "importance".into(),
            draws: 50_000,
            proposal_inflation: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BvmSection {
    pub n_grid: Vec<usize>,
    pub replicates: usize,
}

impl Default for BvmSection {
    fn default() -> Self {
        Self {
            n_grid: vec![25, 100, 400],
            replicates: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub alphas: Vec<f64>,
    pub output_dir: Option<PathBuf>,
    pub format: Format,
    pub model: ModelSection,
    pub data: Option<DataSection>,
    pub design: DesignSection,
    pub prior: PriorSection,
    pub sampler: SamplerSection,
    pub influence: InfluenceSection,
    pub breakdown: BreakdownSection,
    pub bvm: BvmSection,
}

/// Flags shared by the config-driven subcommands.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated α values.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse(format!("config: {e}")))
    }

    /// Reads the config file (if any), applies flag overrides and validates.
    pub fn resolve(o: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match &o.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                let mut c = Self::from_toml(&text)?;
                // Relative data paths are relative to the config file.
                if let (Some(d), Some(dir)) = (c.data.as_mut(), p.parent()) {
                    if d.path.is_relative() {
                        d.path = dir.join(&d.path);
                    }
                }
                c
            }
            None => Self::default(),
        };
        // The environment beats the file; an explicit flag beats both.
        if let Some(d) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
            cfg.output_dir = Some(PathBuf::from(d));
        }
        if let Some(s) = o.seed {
            cfg.seed = Some(s);
        }
        if let Some(a) = &o.alpha {
            cfg.alphas = a.clone();
        }
        if let Some(d) = &o.output_dir {
            cfg.output_dir = Some(d.clone());
        }
        if let Some(f) = o.format {
            cfg.format = f;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seed.is_none() {
            return Err(CliError::Config("a seed is required (config `seed` or --seed)".into()));
        }
        if self.alphas.is_empty() {
            return Err(CliError::Config("no alpha values (config `alphas` or --alpha)".into()));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
            return Err(CliError::Config(format!("alpha must be non-negative, got {a}")));
        }
        self.family()?;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated")
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Resolved output directory, `.` when nothing set one.
    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn family(&self) -> Result<Family, CliError> {
        parse_family(&self.model.family, self.model.sigma)
    }

    /// Observed data or a simulated dataset, and a model on its design.
    pub fn dataset(&self) -> Result<(RegressionModel, Dataset), CliError> {
        let family = self.family()?;
        if let Some(d) = &self.data {
            let data = Dataset::from_csv_path(&d.path, d.header)?;
            let model = RegressionModel::for_data(family, &data)?;
            return Ok((model, data));
        }
        let model = RegressionModel::new(family, self.design_matrix(self.design.n)?)?;
        let theta_g = self.theta_g(&model)?;
        let mut rng = self.rng(2);
        let data = model.simulate(&theta_g, &mut rng)?;
        Ok((model, data))
    }

    /// Design with `n` rows drawn from the `[design]` section.
    pub fn design_matrix(&self, n: usize) -> Result<DMatrix<f64>, CliError> {
        let d = &self.design;
        let p = d.intercept as usize + d.covariates;
        if p == 0 || n == 0 {
            return Err(CliError::Config("design needs rows and at least one column".into()));
        }
        let normal = Normal::new(d.covariate_mean, d.covariate_sd)
            .map_err(|e| CliError::Config(format!("covariate distribution: {e}")))?;
        let mut rng = self.rng(1);
        let mut z = DMatrix::zeros(n, p);
        for i in 0..n {
            for j in 0..p {
                z[(i, j)] = if d.intercept && j == 0 { 1.0 } else { normal.sample(&mut rng) };
            }
        }
        Ok(z)
    }

    pub fn theta_g(&self, model: &RegressionModel) -> Result<Parameter, CliError> {
        use rposterior::InhModel;
        let dim = model.dim();
        let v = match &self.model.theta_g {
            Some(v) => v.clone(),
            None => vec![1.0; dim],
        };
        if v.len() != dim {
            return Err(CliError::Config(format!(
                "theta_g has {} entries, the model has {dim} parameters",
                v.len()
            )));
        }
        Ok(Parameter::new(v))
    }

    pub fn prior(&self, dim: usize) -> Result<Prior, CliError> {
        let p = &self.prior;
        Ok(match p.kind.as_str() {
            "gaussian" => {
                let mean = DVector::from_vec(p.mean.expand(dim, "prior mean")?);
                let sd = DVector::from_vec(p.sd.expand(dim, "prior sd")?);
                Prior::gaussian(mean, DMatrix::from_diagonal(&sd.map(|s| s * s)))?
            }
            "uniform" => Prior::uniform_box(
                DVector::from_vec(p.lower.expand(dim, "prior lower")?),
                DVector::from_vec(p.upper.expand(dim, "prior upper")?),
            )?,
            "flat" => Prior::ImproperFlat,
            other => return Err(CliError::Config(format!("unknown prior kind {other:?}"))),
        })
    }

    /// Independent RNG stream for one purpose.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed());
        r.set_stream(stream);
        r
    }
}

pub fn parse_family(name: &str, sigma: f64) -> Result<Family, CliError> {
    match name {
        "linear" => {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(CliError::Config(format!("sigma must be positive, got {sigma}")));
            }
            Ok(Family::LinearKnownSigma { sigma })
        }
        "linear-unknown-sigma" => Ok(Family::LinearUnknownSigma),
        "logistic" => Ok(Family::Logistic),
        other => Err(CliError::Config(format!(
            "unknown model {other:?} (expected linear, linear-unknown-sigma or logistic)"
        ))),
    }
}

/// Creates the output directory and returns the path of `name` inside it.
pub fn output_path(cfg: &ExperimentConfig, name: &str) -> Result<PathBuf, CliError> {
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    Ok(dir.join(with_extension(name, cfg.format)))
}

fn with_extension(name: &str, f: Format) -> String {
    match f {
        Format::Csv => format!("{name}.csv"),
        Format::Json => format!("{name}.json"),
    }
}
