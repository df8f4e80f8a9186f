//! Analytic densities with exact log-density, score and sampling.
//!
//! These are the ground truth against which ratio estimators and flows are
//! checked. Covariances are diagonal.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal Gaussian component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::invalid("gaussian needs dimension >= 1"));
        }
        if mean.len() != var.len() {
            return Err(Error::DimensionMismatch {
                context: "gaussian covariance",
                expected: mean.len(),
                found: var.len(),
            });
        }
        if let Some(v) = var.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid(format!("variance {v} is not positive")));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("gaussian mean must be finite"));
        }
        Ok(Self { mean, var })
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((xi, mi), vi) in x.iter().zip(&self.mean).zip(&self.var) {
            let d = xi - mi;
            acc -= 0.5 * (d * d / vi + vi.ln() + LN_2PI);
        }
        acc
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        for (((o, xi), mi), vi) in out.iter_mut().zip(x).zip(&self.mean).zip(&self.var) {
            *o = -(xi - mi) / vi;
        }
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for ((o, m), v) in out.iter_mut().zip(&self.mean).zip(&self.var) {
            let z: f64 = rng.sample(StandardNormal);
            *o = m + v.sqrt() * z;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DensityModel {
    Gaussian(DiagGaussian),
    Mixture {
        weights: Vec<f64>,
        components: Vec<DiagGaussian>,
    },
    UniformBox {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// Twisted 2-D Gaussian: `x1 ~ N(0, a²)`, `x2 | x1 ~ N(b (x1² - a²), 1)`.
    Banana {
        scale: f64,
        curvature: f64,
    },
}

impl DensityModel {
    pub fn gaussian(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        DiagGaussian::new(mean, var).map(Self::Gaussian)
    }

    pub fn standard_normal(dim: usize) -> Result<Self> {
        Self::gaussian(vec![0.0; dim], vec![1.0; dim])
    }

    /// Mixture of diagonal Gaussians given as `(weight, mean, variance)`.
    pub fn gaussian_mixture(components: Vec<(f64, Vec<f64>, Vec<f64>)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        let mut weights = Vec::with_capacity(components.len());
        let mut comps = Vec::with_capacity(components.len());
        for (w, mean, var) in components {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::invalid(format!(
                    "mixture weight {w} is not positive"
                )));
            }
            weights.push(w);
            comps.push(DiagGaussian::new(mean, var)?);
        }
        let dim = comps[0].mean.len();
        if let Some(c) = comps.iter().find(|c| c.mean.len() != dim) {
            return Err(Error::DimensionMismatch {
                context: "mixture component",
                expected: dim,
                found: c.mean.len(),
            });
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        Ok(Self::Mixture {
            weights,
            components: comps,
        })
    }

    /// `n` equally weighted isotropic Gaussians evenly spaced on a circle.
    pub fn ring(n: usize, radius: f64, var: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("ring needs at least one component"));
        }
        Self::gaussian_mixture(
            ring_centers(n, radius)
                .into_iter()
                .map(|c| (1.0 / n as f64, c.to_vec(), vec![var, var]))
                .collect(),
        )
    }

    /// Eight unit Gaussians on a circle of radius 5.
    pub fn ring8() -> Self {
        Self::ring(8, 5.0, 1.0).expect("valid preset")
    }

    /// A `k × k` lattice of isotropic Gaussians with the given spacing,
    /// centred on the origin.
    pub fn lattice(k: usize, spacing: f64, var: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid(
                "lattice needs at least one component per side",
            ));
        }
        Self::gaussian_mixture(
            lattice_centers(k, spacing)
                .into_iter()
                .map(|c| (1.0 / (k * k) as f64, c.to_vec(), vec![var, var]))
                .collect(),
        )
    }

    /// 5 × 5 lattice at spacing 2 with standard deviation 0.5.
    pub fn grid25() -> Self {
        Self::lattice(5, 2.0, 0.25).expect("valid preset")
    }

    pub fn uniform_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::invalid(
                "box bounds must be non-empty and of equal length",
            ));
        }
        if lo
            .iter()
            .zip(&hi)
            .any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h))
        {
            return Err(Error::invalid(
                "degenerate box: need lo < hi in every coordinate",
            ));
        }
        Ok(Self::UniformBox { lo, hi })
    }

    pub fn banana(scale: f64, curvature: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0 && curvature.is_finite()) {
            return Err(Error::invalid(
                "banana needs a positive scale and finite curvature",
            ));
        }
        Ok(Self::Banana { scale, curvature })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian(g) => g.mean.len(),
            Self::Mixture { components, .. } => components[0].mean.len(),
            Self::UniformBox { lo, .. } => lo.len(),
            Self::Banana { .. } => 2,
        }
    }

    /// Log-density; `-inf` outside the support.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        match self {
            Self::Gaussian(g) => g.log_density(x),
            Self::Mixture {
                weights,
                components,
            } => {
                let logs: Vec<f64> = weights
                    .iter()
                    .zip(components)
                    .map(|(w, c)| w.ln() + c.log_density(x))
                    .collect();
                log_sum_exp(&logs)
            }
            Self::UniformBox { lo, hi } => {
                let inside = x
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .all(|(v, (l, h))| *l <= *v && *v <= *h);
                if inside {
                    -lo.iter().zip(hi).map(|(l, h)| (h - l).ln()).sum::<f64>()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Self::Banana { scale, curvature } => {
                let (x1, x2) = (x[0], x[1]);
                let u = x2 - curvature * (x1 * x1 - scale * scale);
                -0.5 * (x1 * x1 / (scale * scale)) - scale.ln() - 0.5 * u * u - LN_2PI
            }
        }
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }

    /// Gradient of the log-density. Zero inside a uniform box.
    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.score_into(x, &mut out);
        out
    }

    pub fn score_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::Gaussian(g) => g.score_into(x, out),
            Self::Mixture {
                weights,
                components,
            } => {
                let logs: Vec<f64> = weights
                    .iter()
                    .zip(components)
                    .map(|(w, c)| w.ln() + c.log_density(x))
                    .collect();
                let norm = log_sum_exp(&logs);
                out.iter_mut().for_each(|o| *o = 0.0);
                let mut tmp = vec![0.0; x.len()];
                for (c, l) in components.iter().zip(&logs) {
                    let resp = (l - norm).exp();
                    if resp == 0.0 {
                        continue;
                    }
                    c.score_into(x, &mut tmp);
                    for (o, t) in out.iter_mut().zip(&tmp) {
                        *o += resp * t;
                    }
                }
            }
            Self::UniformBox { .. } => out.iter_mut().for_each(|o| *o = 0.0),
            Self::Banana { scale, curvature } => {
                let (x1, x2) = (x[0], x[1]);
                let u = x2 - curvature * (x1 * x1 - scale * scale);
                out[0] = -x1 / (scale * scale) + 2.0 * curvature * x1 * u;
                out[1] = -u;
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> ParticleEnsemble {
        let d = self.dim();
        let mut data = vec![0.0; count * d];
        for row in data.chunks_exact_mut(d) {
            self.sample_one(rng, row);
        }
        let positions = Array2::from_shape_vec((count, d), data).expect("shape matches buffer");
        ParticleEnsemble::new(positions).expect("samples are finite")
    }

    fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            Self::Gaussian(g) => g.sample_into(rng, out),
            Self::Mixture {
                weights,
                components,
            } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = components.len() - 1;
                for (k, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        chosen = k;
                        break;
                    }
                }
                components[chosen].sample_into(rng, out);
            }
            Self::UniformBox { lo, hi } => {
                for ((o, l), h) in out.iter_mut().zip(lo).zip(hi) {
                    let u: f64 = rng.random();
                    *o = l + (h - l) * u;
                }
            }
            Self::Banana { scale, curvature } => {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                let x1 = scale * z1;
                out[0] = x1;
                out[1] = z2 + curvature * (x1 * x1 - scale * scale);
            }
        }
    }

    /// Component means for mixtures (used for mode counting); the single
    /// mean for a Gaussian; empty otherwise.
    pub fn mode_centers(&self) -> Vec<Vec<f64>> {
        match self {
            Self::Gaussian(g) => vec![g.mean.clone()],
            Self::Mixture { components, .. } => components.iter().map(|c| c.mean.clone()).collect(),
            _ => Vec::new(),
        }
    }
}

/// `log q(x) - log p(x)`.
pub fn exact_log_ratio(q: &DensityModel, p: &DensityModel, x: &[f64]) -> Result<f64> {
    let lp = p.log_density(x);
    if lp == f64::NEG_INFINITY {
        return Err(Error::OutsideSupport {
            which: "p",
            point: x.to_vec(),
        });
    }
    Ok(q.log_density(x) - lp)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn ring_centers(n: usize, radius: f64) -> Vec<[f64; 2]> {
    (0..n)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / n as f64;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect()
}

pub fn lattice_centers(k: usize, spacing: f64) -> Vec<[f64; 2]> {
    let off = spacing * (k as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            out.push([i as f64 * spacing - off, j as f64 * spacing - off]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn fd_score(d: &DensityModel, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let h = 1e-5 * (1.0 + x[i].abs());
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (d.log_density(&a) - d.log_density(&b)) / (2.0 * h)
            })
            .collect()
    }

    fn models() -> Vec<DensityModel> {
        vec![
            DensityModel::gaussian(vec![1.0, -2.0], vec![0.5, 3.0]).unwrap(),
            DensityModel::ring8(),
            DensityModel::grid25(),
            DensityModel::banana(1.5, 0.4).unwrap(),
            DensityModel::gaussian_mixture(vec![
                (0.3, vec![-1.0, 0.0], vec![1.0, 2.0]),
                (0.7, vec![2.0, 1.0], vec![0.5, 0.5]),
            ])
            .unwrap(),
        ]
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn scores_match_finite_differences() {
        let mut r = rng::seeded(11);
        for m in models() {
            for _ in 0..100 {
                let x: Vec<f64> = (0..2).map(|_| r.random_range(-4.0..4.0)).collect();
                let a = m.score(&x);
                let n = fd_score(&m, &x);
                for (ai, ni) in a.iter().zip(&n) {
                    assert!(close(*ai, *ni, 1e-5), "{m:?} at {x:?}: {a:?} vs {n:?}");
                }
            }
        }
    }

    #[test]
    fn log_ratio_gradient_is_score_difference() {
        let mut r = rng::seeded(12);
        let ms = models();
        for (q, p) in ms.iter().zip(ms.iter().skip(1)) {
            for _ in 0..100 {
                let x: Vec<f64> = (0..2).map(|_| r.random_range(-4.0..4.0)).collect();
                let sq = q.score(&x);
                let sp = p.score(&x);
                for i in 0..2 {
                    let h = 1e-5;
                    let mut a = x.clone();
                    let mut b = x.clone();
                    a[i] += h;
                    b[i] -= h;
                    let fd = (exact_log_ratio(q, p, &a).unwrap()
                        - exact_log_ratio(q, p, &b).unwrap())
                        / (2.0 * h);
                    assert!(close(fd, sq[i] - sp[i], 1e-5));
                }
            }
        }
    }

    #[test]
    fn standard_normal_facts() {
        let g = DensityModel::standard_normal(2).unwrap();
        assert_eq!(g.score(&[0.3, -1.2]), vec![-0.3, 1.2]);
        assert!((g.log_density(&[0.0, 0.0]) + (2.0 * PI).ln()).abs() < 1e-12);
        let g1 = DensityModel::gaussian(vec![1.0], vec![1.0]).unwrap();
        assert!((g1.log_density(&[1.0]) - g1.log_density(&[0.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_variance_rejected() {
        assert!(DensityModel::gaussian(vec![0.0], vec![0.0]).is_err());
        assert!(DensityModel::gaussian(vec![0.0], vec![-1.0]).is_err());
    }

    #[test]
    fn one_component_mixture_equals_gaussian() {
        let g = DensityModel::gaussian(vec![0.5, -1.0], vec![2.0, 0.3]).unwrap();
        let m =
            DensityModel::gaussian_mixture(vec![(1.0, vec![0.5, -1.0], vec![2.0, 0.3])]).unwrap();
        let mut r = rng::seeded(3);
        for _ in 0..100 {
            let x = [r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)];
            assert!((g.log_density(&x) - m.log_density(&x)).abs() < 1e-12);
            for (a, b) in g.score(&x).iter().zip(m.score(&x)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_mixture_score_vanishes_at_origin() {
        let m = DensityModel::gaussian_mixture(vec![
            (0.5, vec![2.0], vec![1.0]),
            (0.5, vec![-2.0], vec![1.0]),
        ])
        .unwrap();
        assert!(m.score(&[0.0])[0].abs() < 1e-15);
    }

    #[test]
    fn mixture_weights_must_sum_to_one() {
        let err = DensityModel::gaussian_mixture(vec![
            (0.5, vec![0.0], vec![1.0]),
            (0.5 + 1e-8, vec![1.0], vec![1.0]),
        ]);
        assert!(err.is_err());
    }

    #[test]
    fn ring_integrates_to_one() {
        let m = DensityModel::ring8();
        let n = 401;
        let h = 20.0 / (n - 1) as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = [-10.0 + i as f64 * h, -10.0 + j as f64 * h];
                let wi = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                let wj = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
                total += wi * wj * m.density(&x);
            }
        }
        total *= h * h;
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn uniform_box_behaviour() {
        let b = DensityModel::uniform_box(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(b.log_density(&[0.5, 0.5]), 0.0);
        assert_eq!(b.log_density(&[1.5, 0.5]), f64::NEG_INFINITY);
        assert_eq!(b.score(&[0.2, 0.7]), vec![0.0, 0.0]);
        let mut r = rng::seeded(4);
        let s = b.sample(&mut r, 100_000);
        for m in s.mean().unwrap() {
            assert!((m - 0.5).abs() < 0.01);
        }
        assert!(DensityModel::uniform_box(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn gaussian_sample_moments() {
        let g = DensityModel::gaussian(vec![1.0, -3.0], vec![4.0, 0.25]).unwrap();
        let mut r = rng::seeded(5);
        let n = 100_000;
        let s = g.sample(&mut r, n);
        let mean = s.mean().unwrap();
        let var: Vec<f64> = (0..2)
            .map(|k| s.points().map(|p| (p[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1) as f64)
            .collect();
        for (k, (m, v)) in [(1.0, 4.0), (-3.0, 0.25)].iter().enumerate() {
            let se_mean = (v / n as f64).sqrt();
            let se_var = v * (2.0 / (n - 1) as f64).sqrt();
            assert!((mean[k] - m).abs() < 5.0 * se_mean);
            assert!((var[k] - v).abs() < 5.0 * se_var);
        }
    }

    #[test]
    fn exact_log_ratio_values() {
        let q = DensityModel::gaussian(vec![0.0], vec![1.0]).unwrap();
        let p = DensityModel::gaussian(vec![1.0], vec![1.0]).unwrap();
        assert!(exact_log_ratio(&q, &p, &[0.5]).unwrap().abs() < 1e-15);
        assert!((exact_log_ratio(&q, &p, &[0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(exact_log_ratio(&q, &q, &[2.7]).unwrap(), 0.0);
        let b = DensityModel::uniform_box(vec![0.0], vec![1.0]).unwrap();
        assert!(exact_log_ratio(&q, &b, &[2.0]).is_err());
    }
}
