//! Robust pseudo-Bayesian inference for independent non-homogeneous models
//! based on the α-likelihood (density power divergence).

pub mod alpha_likelihood;
pub mod diagnostics;
pub mod error;
pub mod laplace;
pub mod linalg;
pub mod mdpde;
pub mod model;
pub mod numeric;
pub mod optim;
pub mod posterior;
pub mod quadrature;
pub mod robustness;

pub use error::{Error, Result};
pub use model::{Dataset, Family, InhModel, Parameter, RegressionModel, Support};
