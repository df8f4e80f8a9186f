//! 1-D grids, composite trapezoid rule and finite-difference helpers.

use crate::error::{Error, Result};

/// Uniform grid `[lo, hi]` with `n` points (endpoints included).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1d {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Grid1d {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!(
                "grid bounds [{lo}, {hi}] are not an interval"
            )));
        }
        if n < 2 {
            return Err(Error::invalid("grid needs at least 2 points"));
        }
        Ok(Self { lo, hi, n })
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }
}

/// Composite trapezoid rule on (possibly non-uniform) sorted abscissae.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// Derivative of sampled values on a non-uniform grid.
///
/// Interior points use the three-point second-order formula; the two ends
/// use one-sided second-order formulas.
pub fn derivative_nonuniform(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    assert!(n >= 3 && ys.len() == n);
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        let h0 = xs[i] - xs[i - 1];
        let h1 = xs[i + 1] - xs[i];
        out[i] = (-h1 / (h0 * (h0 + h1))) * ys[i - 1]
            + ((h1 - h0) / (h0 * h1)) * ys[i]
            + (h0 / (h1 * (h0 + h1))) * ys[i + 1];
    }
    let (h0, h1) = (xs[1] - xs[0], xs[2] - xs[1]);
    out[0] = (-(2.0 * h0 + h1) / (h0 * (h0 + h1))) * ys[0]
        + ((h0 + h1) / (h0 * h1)) * ys[1]
        + (-h0 / (h1 * (h0 + h1))) * ys[2];
    let (h0, h1) = (xs[n - 2] - xs[n - 3], xs[n - 1] - xs[n - 2]);
    out[n - 1] = (h1 / (h0 * (h0 + h1))) * ys[n - 3]
        + (-(h0 + h1) / (h0 * h1)) * ys[n - 2]
        + ((2.0 * h1 + h0) / (h1 * (h0 + h1))) * ys[n - 1];
    out
}

/// Fourth-order central difference on a uniform grid; entries within two
/// points of either end are `None`.
pub fn central_derivative_uniform(ys: &[f64], h: f64) -> Vec<Option<f64>> {
    let n = ys.len();
    (0..n)
        .map(|i| {
            (i >= 2 && i + 2 < n)
                .then(|| (-ys[i + 2] + 8.0 * ys[i + 1] - 8.0 * ys[i - 1] + ys[i - 2]) / (12.0 * h))
        })
        .collect()
}

/// Least-squares slope of `ys` against `xs`.
pub fn fitted_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
