//! Adaptive Gauss–Kronrod (7/15) quadrature for vector-valued integrands.
//!
//! Infinite and semi-infinite ranges are mapped onto finite ones with the
//! rational substitutions `x = c + s·t/(1-t²)` and `x = a + s·t/(1-t)`, where
//! `c`/`s` are a location and scale hint supplied by the caller.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadratureOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    pub initial_pieces: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_subdivisions: 2000,
            initial_pieces: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadratureResult {
    pub value: Vec<f64>,
    pub error: f64,
    pub evaluations: usize,
}

/// Integration range with an optional location/scale hint for unbounded ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lower: f64,
    pub upper: f64,
    pub center: f64,
    pub scale: f64,
}

impl Range {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self {
            lower,
            upper,
            center: 0.0,
            scale: 1.0,
        }
    }

    pub fn real_line() -> Self {
        Self::new(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn with_hint(mut self, center: f64, scale: f64) -> Self {
        self.center = center;
        self.scale = scale.abs().max(f64::MIN_POSITIVE);
        self
    }
}

struct Segment {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F>(f: &F, a: f64, b: f64, dim: usize) -> (Vec<f64>, f64)
where
    F: Fn(f64) -> Vec<f64>,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut k = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    let fc = f(c);
    for d in 0..dim {
        k[d] = WGK[7] * fc[d];
        g[d] = WG[3] * fc[d];
    }
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        for d in 0..dim {
            let s = f1[d] + f2[d];
            k[d] += WGK[j] * s;
            if j % 2 == 1 {
                g[d] += WG[j / 2] * s;
            }
        }
    }
    let mut err: f64 = 0.0;
    for d in 0..dim {
        k[d] *= h;
        g[d] *= h;
        err = err.max((k[d] - g[d]).abs());
    }
    (k, err)
}

/// Integrates `f` over a finite interval `[a, b]`.
fn integrate_finite<F>(f: F, a: f64, b: f64, opts: &QuadratureOptions) -> Result<QuadratureResult>
where
    F: Fn(f64) -> Vec<f64>,
{
    let dim = f(0.5 * (a + b)).len();
    let pieces = opts.initial_pieces.max(1);
    let width = (b - a) / pieces as f64;
    let mut heap = BinaryHeap::new();
    let mut evaluations = 1;
    for k in 0..pieces {
        let lo = a + width * k as f64;
        let hi = if k + 1 == pieces { b } else { lo + width };
        let (value, error) = kronrod(&f, lo, hi, dim);
        evaluations += 15;
        heap.push(Segment {
            a: lo,
            b: hi,
            value,
            error,
        });
    }

    let total = |heap: &BinaryHeap<Segment>| -> (Vec<f64>, f64) {
        let mut v = vec![0.0; dim];
        let mut e = 0.0;
        for s in heap.iter() {
            for d in 0..dim {
                v[d] += s.value[d];
            }
            e += s.error;
        }
        (v, e)
    };

    for _ in 0..opts.max_subdivisions {
        let (value, error) = total(&heap);
        let scale = value.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if error <= opts.abs_tol.max(opts.rel_tol * scale) {
            return Ok(QuadratureResult {
                value,
                error,
                evaluations,
            });
        }
        let worst = heap.pop().expect("non-empty heap");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval can no longer be split in floating point
            heap.push(worst);
            break;
        }
        for (lo, hi) in [(worst.a, mid), (mid, worst.b)] {
            let (value, error) = kronrod(&f, lo, hi, dim);
            evaluations += 15;
            heap.push(Segment {
                a: lo,
                b: hi,
                value,
                error,
            });
        }
    }
    let (value, error) = total(&heap);
    let scale = value.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if error <= 10.0 * opts.abs_tol.max(opts.rel_tol * scale) {
        Ok(QuadratureResult {
            value,
            error,
            evaluations,
        })
    } else {
        Err(Error::Quadrature(format!(
            "error estimate {error:.3e} exceeds tolerance after {} subdivisions",
            opts.max_subdivisions
        )))
    }
}

/// Integrates a vector-valued `f` over `range`.
pub fn integrate_vec<F>(f: F, range: Range, opts: &QuadratureOptions) -> Result<QuadratureResult>
where
    F: Fn(f64) -> Vec<f64>,
{
    let Range {
        lower,
        upper,
        center,
        scale,
    } = range;
    if lower.is_nan() || upper.is_nan() || lower >= upper {
        return Err(Error::Quadrature(format!(
            "invalid range [{lower}, {upper}]"
        )));
    }
    let zero = |len: usize| vec![0.0; len];
    match (lower.is_finite(), upper.is_finite()) {
        (true, true) => integrate_finite(f, lower, upper, opts),
        (false, false) => {
            let g = |t: f64| {
                let d = 1.0 - t * t;
                let x = center + scale * t / d;
                let jac = scale * (1.0 + t * t) / (d * d);
                let mut v = f(x);
                if !jac.is_finite() {
                    return zero(v.len());
                }
                v.iter_mut().for_each(|y| *y = if *y == 0.0 { 0.0 } else { *y * jac });
                v
            };
            integrate_finite(g, -1.0, 1.0, opts)
        }
        (true, false) => {
            let g = |t: f64| {
                let d = 1.0 - t;
                let x = lower + scale * t / d;
                let jac = scale / (d * d);
                let mut v = f(x);
                v.iter_mut().for_each(|y| *y = if *y == 0.0 { 0.0 } else { *y * jac });
                v
            };
            integrate_finite(g, 0.0, 1.0, opts)
        }
        (false, true) => {
            let g = |t: f64| {
                let d = 1.0 - t;
                let x = upper - scale * t / d;
                let jac = scale / (d * d);
                let mut v = f(x);
                v.iter_mut().for_each(|y| *y = if *y == 0.0 { 0.0 } else { *y * jac });
                v
            };
            integrate_finite(g, 0.0, 1.0, opts)
        }
    }
}

/// Scalar convenience wrapper around [`integrate_vec`].
pub fn integrate<F>(f: F, range: Range, opts: &QuadratureOptions) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    integrate_vec(|x| vec![f(x)], range, opts).map(|r| r.value[0])
}
