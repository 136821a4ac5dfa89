//! Small numerical helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl Extend<f64> for CompensatedSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for v in iter {
            self.add(v);
        }
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::new();
    acc.extend(values);
    acc.value()
}

/// `(x^a - 1) / a` evaluated from `log x` without cancellation; tends to `log x` as `a -> 0`.
pub fn box_cox_from_log(log_x: f64, a: f64) -> f64 {
    if a == 0.0 {
        log_x
    } else {
        (a * log_x).exp_m1() / a
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Sample covariance (denominator `m - 1`) of the rows of `samples`.
pub fn sample_covariance(samples: &DMatrix<f64>) -> DMatrix<f64> {
    let m = samples.nrows();
    let p = samples.ncols();
    let mean = sample_mean(samples);
    let mut cov = DMatrix::zeros(p, p);
    for r in 0..m {
        let d = samples.row(r).transpose() - &mean;
        cov += &d * d.transpose();
    }
    cov / (m.saturating_sub(1).max(1) as f64)
}

pub fn sample_mean(samples: &DMatrix<f64>) -> DVector<f64> {
    let m = samples.nrows();
    let p = samples.ncols();
    DVector::from_fn(p, |j, _| {
        compensated_sum((0..m).map(|r| samples[(r, j)])) / m as f64
    })
}

/// Central finite-difference gradient of a scalar function.
pub fn fd_gradient<F>(f: F, x: &DVector<f64>, step: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for j in 0..x.len() {
        let h = step * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        g[j] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central finite-difference Jacobian of a vector-valued function, symmetrised when square.
pub fn fd_jacobian<F>(f: F, x: &DVector<f64>, step: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let p = x.len();
    let mut cols = Vec::with_capacity(p);
    let mut xp = x.clone();
    for j in 0..p {
        let h = step * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        cols.push((fp - fm) / (2.0 * h));
    }
    let jac = DMatrix::from_columns(&cols);
    if jac.nrows() == jac.ncols() {
        (&jac + jac.transpose()) * 0.5
    } else {
        jac
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut values = vec![1e16, 1.0, -1e16];
        values.extend(std::iter::repeat(1.0).take(10));
        assert_eq!(compensated_sum(values), 11.0);
    }

    #[test]
    fn box_cox_limit() {
        let lx = (0.3f64).ln();
        assert!((box_cox_from_log(lx, 1e-9) - lx).abs() < 1e-9);
        assert!((box_cox_from_log(lx, 1.0) - (0.3 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        let v = normal_cdf(1.959963984540054);
        assert!((v - 0.975).abs() < 1e-11, "{v:.17}");
    }
}
