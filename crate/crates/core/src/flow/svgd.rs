//! Stein variational gradient descent: the KL vector field projected onto an
//! RBF reproducing-kernel Hilbert space.
//!
//! `φ(z_j) = (1/N) Σ_i [k(z_i, z_j) ∇log p(z_i) + ∇_{z_i} k(z_i, z_j)]`
//! with `k(x, y) = exp(-‖x - y‖² / (2 h²))`.

use ndarray::Array2;
use rayon::prelude::*;

use crate::density::DensityModel;
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// `median pairwise distance / sqrt(2 log(N + 1))`.
    Median,
}

pub fn median_bandwidth(particles: &ParticleEnsemble) -> Result<f64> {
    let n = particles.len();
    let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        let a = particles.point(i);
        for j in i + 1..n {
            dists.push(sq_dist(a, particles.point(j)).sqrt());
        }
    }
    if dists.is_empty() {
        return Err(Error::DegenerateBandwidth);
    }
    let med = median(&mut dists);
    if med <= 0.0 {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(med / (2.0 * ((n + 1) as f64).ln()).sqrt())
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn resolve(bandwidth: Bandwidth, particles: &ParticleEnsemble) -> Result<f64> {
    match bandwidth {
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => Ok(h),
        Bandwidth::Fixed(h) => Err(Error::invalid(format!("bandwidth {h} must be > 0"))),
        Bandwidth::Median => median_bandwidth(particles),
    }
}

pub fn svgd_direction(
    particles: &ParticleEnsemble,
    target: &DensityModel,
    bandwidth: Bandwidth,
) -> Result<Array2<f64>> {
    let n = particles.len();
    let d = particles.dim();
    if n == 0 {
        return Err(Error::TooFewPoints {
            context: "svgd_direction",
            required: 1,
            found: 0,
        });
    }
    if d != target.dim() {
        return Err(Error::DimensionMismatch {
            context: "svgd target dimension",
            expected: target.dim(),
            found: d,
        });
    }
    let h = resolve(bandwidth, particles)?;
    let inv_h2 = 1.0 / (h * h);
    let scores: Vec<Vec<f64>> = particles.points().map(|z| target.score(z)).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let zj = particles.point(j);
            let mut phi = vec![0.0; d];
            for (i, score) in scores.iter().enumerate() {
                let zi = particles.point(i);
                let k = (-0.5 * sq_dist(zi, zj) * inv_h2).exp();
                for c in 0..d {
                    phi[c] += k * score[c] - (zi[c] - zj[c]) * inv_h2 * k;
                }
            }
            phi.iter_mut().for_each(|v| *v /= n as f64);
            phi
        })
        .collect();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((n, d), flat).expect("n*d entries"))
}

/// One SVGD update `z <- z + ε φ(z)`.
pub fn svgd_step(
    particles: &ParticleEnsemble,
    target: &DensityModel,
    bandwidth: Bandwidth,
    step_size: f64,
) -> Result<ParticleEnsemble> {
    let phi = svgd_direction(particles, target, bandwidth)?;
    super::residual_apply(particles, &phi.view(), step_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_particle_follows_score() {
        let p = DensityModel::standard_normal(1).unwrap();
        let z = ParticleEnsemble::from_rows(&[vec![1.7]]).unwrap();
        let phi = svgd_direction(&z, &p, Bandwidth::Fixed(0.8)).unwrap();
        assert_eq!(phi[[0, 0]], -1.7);
        let at_mean = ParticleEnsemble::from_rows(&[vec![0.0]]).unwrap();
        assert_eq!(
            svgd_direction(&at_mean, &p, Bandwidth::Fixed(1.0)).unwrap()[[0, 0]],
            0.0
        );
    }

    #[test]
    fn symmetric_particles_have_zero_mean_direction() {
        let p = DensityModel::standard_normal(2).unwrap();
        let z = ParticleEnsemble::from_rows(&[
            vec![1.0, 0.5],
            vec![-1.0, -0.5],
            vec![2.0, -1.0],
            vec![-2.0, 1.0],
        ])
        .unwrap();
        let phi = svgd_direction(&z, &p, Bandwidth::Median).unwrap();
        for c in 0..2 {
            assert!(phi.column(c).sum().abs() < 1e-14);
        }
    }

    #[test]
    fn distant_particles_decouple() {
        let p = DensityModel::standard_normal(2).unwrap();
        let z = ParticleEnsemble::from_rows(&[vec![-20.0, 0.0], vec![20.0, 1.0]]).unwrap();
        let phi = svgd_direction(&z, &p, Bandwidth::Fixed(1.0)).unwrap();
        // Each particle sees only itself, with weight 1/N.
        for i in 0..2 {
            let s = p.score(z.point(i));
            for c in 0..2 {
                assert!((phi[[i, c]] - s[c] / 2.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn degenerate_median_rejected() {
        let p = DensityModel::standard_normal(1).unwrap();
        let z = ParticleEnsemble::from_rows(&[vec![1.0], vec![1.0], vec![1.0]]).unwrap();
        assert!(matches!(
            svgd_direction(&z, &p, Bandwidth::Median),
            Err(Error::DegenerateBandwidth)
        ));
        let one = ParticleEnsemble::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(
            median_bandwidth(&one),
            Err(Error::DegenerateBandwidth)
        ));
    }
}
