//! Two-sample diagnostics: energy distance, RBF-kernel MMD, null spread by
//! relabeling, and nearest-center mode coverage.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::density::DensityModel;
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::flow::svgd::{median, sq_dist, Bandwidth};

/// Largest sample size fed to the O(N²) statistics.
pub const MAX_POINTS: usize = 4000;
/// Points per side used to pick the median-heuristic bandwidth.
const MEDIAN_POINTS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoSampleReport {
    pub energy_distance: f64,
    pub mmd_rbf: f64,
    pub sample_sizes: (usize, usize),
    pub bandwidth: f64,
    /// True when either side was subsampled down to `MAX_POINTS`.
    pub subsampled: bool,
}

fn check_pair(a: &ParticleEnsemble, b: &ParticleEnsemble, context: &'static str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context,
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let smallest = a.len().min(b.len());
    if smallest < 2 {
        return Err(Error::TooFewPoints {
            context,
            required: 2,
            found: smallest,
        });
    }
    Ok(())
}

/// Rows in lexicographic order, so that sums over pairs do not depend on the
/// input row order.
fn sorted_rows(x: &ParticleEnsemble) -> ParticleEnsemble {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| {
        x.point(i)
            .iter()
            .zip(x.point(j))
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    ParticleEnsemble::new(x.select(&idx)).expect("rows of a valid ensemble")
}

/// Orders a pair canonically so that symmetric statistics are bit-identical
/// under argument swap.
fn canonical<'a>(
    a: &'a ParticleEnsemble,
    b: &'a ParticleEnsemble,
) -> (&'a ParticleEnsemble, &'a ParticleEnsemble) {
    let key = |x: &ParticleEnsemble| x.len();
    let swap = match key(a).cmp(&key(b)) {
        std::cmp::Ordering::Equal => a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .is_some_and(|o| o.is_gt()),
        o => o.is_gt(),
    };
    if swap {
        (b, a)
    } else {
        (a, b)
    }
}

/// Sums `g(x_i, y_j)` over all pairs, skipping the diagonal when `within`.
/// Row sums are reduced in order, so the result does not depend on the thread
/// count.
fn pair_sum(
    x: &ParticleEnsemble,
    y: &ParticleEnsemble,
    within: bool,
    g: impl Fn(f64) -> f64 + Sync,
) -> f64 {
    let rows: Vec<f64> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let xi = x.point(i);
            let mut acc = 0.0;
            for j in 0..y.len() {
                if within && i == j {
                    continue;
                }
                acc += g(sq_dist(xi, y.point(j)));
            }
            acc
        })
        .collect();
    rows.iter().sum()
}

/// `2 E‖A - B‖ - E‖A - A'‖ - E‖B - B'‖` with U-statistics for the
/// within-sample terms.
pub fn energy_distance(a: &ParticleEnsemble, b: &ParticleEnsemble) -> Result<f64> {
    check_pair(a, b, "energy_distance")?;
    let (a, b) = (sorted_rows(a), sorted_rows(b));
    let (a, b) = canonical(&a, &b);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let cross = pair_sum(a, b, false, f64::sqrt) / (n * m);
    let aa = pair_sum(a, a, true, f64::sqrt) / (n * (n - 1.0));
    let bb = pair_sum(b, b, true, f64::sqrt) / (m * (m - 1.0));
    Ok(2.0 * cross - aa - bb)
}

/// Median heuristic on the pooled sample (at most `MEDIAN_POINTS` evenly
/// strided rows of each side), with the same normalization as SVGD.
pub fn pooled_median_bandwidth(a: &ParticleEnsemble, b: &ParticleEnsemble) -> Result<f64> {
    let strided = |x: &ParticleEnsemble| x.len().div_ceil(MEDIAN_POINTS).max(1);
    let pts: Vec<&[f64]> = a
        .points()
        .step_by(strided(a))
        .chain(b.points().step_by(strided(b)))
        .collect();
    let mut dists = Vec::with_capacity(pts.len() * pts.len() / 2);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            dists.push(sq_dist(pts[i], pts[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return Err(Error::DegenerateBandwidth);
    }
    let med = median(&mut dists);
    if med <= 0.0 {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(med / (2.0 * ((pts.len() + 1) as f64).ln()).sqrt())
}

fn resolve(bandwidth: Bandwidth, a: &ParticleEnsemble, b: &ParticleEnsemble) -> Result<f64> {
    match bandwidth {
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => Ok(h),
        Bandwidth::Fixed(h) => Err(Error::invalid(format!("bandwidth {h} must be > 0"))),
        Bandwidth::Median => pooled_median_bandwidth(a, b),
    }
}

/// Unbiased squared MMD with kernel `exp(-‖x - y‖² / (2h²))`. Returns the
/// estimate and the bandwidth used.
pub fn mmd_rbf(
    a: &ParticleEnsemble,
    b: &ParticleEnsemble,
    bandwidth: Bandwidth,
) -> Result<(f64, f64)> {
    check_pair(a, b, "mmd_rbf")?;
    let (a, b) = (sorted_rows(a), sorted_rows(b));
    let (a, b) = canonical(&a, &b);
    let h = resolve(bandwidth, a, b)?;
    let c = -0.5 / (h * h);
    let k = move |d2: f64| (c * d2).exp();
    let (n, m) = (a.len() as f64, b.len() as f64);
    let aa = pair_sum(a, a, true, k) / (n * (n - 1.0));
    let bb = pair_sum(b, b, true, k) / (m * (m - 1.0));
    let ab = pair_sum(a, b, false, k) / (n * m);
    Ok((aa + bb - 2.0 * ab, h))
}

/// Uniform subsample without replacement down to `max` rows (in original
/// order), or the ensemble itself when it already fits.
pub fn subsample<R: Rng + ?Sized>(
    x: &ParticleEnsemble,
    max: usize,
    rng: &mut R,
) -> ParticleEnsemble {
    if x.len() <= max {
        return x.clone();
    }
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.shuffle(rng);
    idx.truncate(max);
    idx.sort_unstable();
    ParticleEnsemble::new(x.select(&idx)).expect("rows of a valid ensemble")
}

pub fn two_sample_report<R: Rng + ?Sized>(
    a: &ParticleEnsemble,
    b: &ParticleEnsemble,
    bandwidth: Bandwidth,
    rng: &mut R,
) -> Result<TwoSampleReport> {
    check_pair(a, b, "two_sample_report")?;
    let subsampled = a.len() > MAX_POINTS || b.len() > MAX_POINTS;
    let a = subsample(a, MAX_POINTS, rng);
    let b = subsample(b, MAX_POINTS, rng);
    let energy_distance = energy_distance(&a, &b)?;
    let (mmd, h) = mmd_rbf(&a, &b, bandwidth)?;
    Ok(TwoSampleReport {
        energy_distance,
        mmd_rbf: mmd,
        sample_sizes: (a.len(), b.len()),
        bandwidth: h,
        subsampled,
    })
}

/// Values of `stat` over `reps` random relabelings of the pooled sample,
/// keeping the original group sizes.
pub fn permutation_null<R: Rng + ?Sized>(
    a: &ParticleEnsemble,
    b: &ParticleEnsemble,
    reps: usize,
    rng: &mut R,
    stat: impl Fn(&ParticleEnsemble, &ParticleEnsemble) -> Result<f64>,
) -> Result<Vec<f64>> {
    check_pair(a, b, "permutation_null")?;
    let pooled: Vec<&[f64]> = a.points().chain(b.points()).collect();
    let d = a.dim();
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    let gather = |rows: &[usize]| {
        let flat: Vec<f64> = rows
            .iter()
            .flat_map(|&i| pooled[i].iter().copied())
            .collect();
        ParticleEnsemble::from_flat(d, flat).expect("rows of valid ensembles")
    };
    (0..reps)
        .map(|_| {
            idx.shuffle(rng);
            let (left, right) = idx.split_at(a.len());
            stat(&gather(left), &gather(right))
        })
        .collect()
}

pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseFloor {
    /// Mean of `|ED|` between pairs of independent target draws.
    pub mean_abs: f64,
    pub std: f64,
    pub replicates: usize,
    pub sample_size: usize,
}

/// Energy distance between two fresh target draws of `n` points, repeated
/// `replicates` times.
pub fn energy_noise_floor<R: Rng + ?Sized>(
    target: &DensityModel,
    n: usize,
    replicates: usize,
    rng: &mut R,
) -> Result<NoiseFloor> {
    if replicates == 0 {
        return Err(Error::invalid("noise floor needs at least one replicate"));
    }
    let values: Vec<f64> = (0..replicates)
        .map(|_| {
            let a = target.sample(rng, n);
            let b = target.sample(rng, n);
            energy_distance(&a, &b)
        })
        .collect::<Result<_>>()?;
    Ok(NoiseFloor {
        mean_abs: values.iter().map(|v| v.abs()).sum::<f64>() / replicates as f64,
        std: std_dev(&values),
        replicates,
        sample_size: n,
    })
}

/// Fraction of points whose nearest center is each center.
pub fn mode_coverage(samples: &ParticleEnsemble, centers: &[Vec<f64>]) -> Result<Vec<f64>> {
    if centers.is_empty() {
        return Err(Error::invalid("mode coverage needs at least one center"));
    }
    if let Some(c) = centers.iter().find(|c| c.len() != samples.dim()) {
        return Err(Error::DimensionMismatch {
            context: "mode center",
            expected: samples.dim(),
            found: c.len(),
        });
    }
    let mut counts = vec![0usize; centers.len()];
    for x in samples.points() {
        let nearest = centers
            .iter()
            .enumerate()
            .map(|(k, c)| (k, sq_dist(x, c)))
            .min_by(|l, r| l.1.total_cmp(&r.1))
            .map(|(k, _)| k)
            .expect("non-empty centers");
        counts[nearest] += 1;
    }
    let n = samples.len().max(1) as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn ens(rows: &[&[f64]]) -> ParticleEnsemble {
        ParticleEnsemble::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn energy_of_two_point_masses() {
        let a = ens(&[&[0.0, 0.0], &[0.0, 0.0]]);
        let b = ens(&[&[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(energy_distance(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn energy_is_homogeneous() {
        let mut r = rng::seeded(4);
        let a = DensityModel::standard_normal(2).unwrap().sample(&mut r, 60);
        let b = DensityModel::gaussian(vec![1.0, 0.0], vec![2.0, 1.0])
            .unwrap()
            .sample(&mut r, 80);
        let c = 3.5;
        let scale = |x: &ParticleEnsemble| ParticleEnsemble::new(x.positions() * c).unwrap();
        let base = energy_distance(&a, &b).unwrap();
        let scaled = energy_distance(&scale(&a), &scale(&b)).unwrap();
        assert!((scaled - c * base).abs() < 1e-12 * scaled.abs().max(1.0));
    }

    #[test]
    fn too_few_points_rejected() {
        let a = ens(&[&[0.0]]);
        let b = ens(&[&[1.0], &[2.0]]);
        assert!(matches!(
            energy_distance(&a, &b),
            Err(Error::TooFewPoints { .. })
        ));
        assert!(matches!(
            mmd_rbf(&b, &a, Bandwidth::Median),
            Err(Error::TooFewPoints { .. })
        ));
    }

    #[test]
    fn mismatched_dims_rejected() {
        let a = ens(&[&[0.0], &[1.0]]);
        let b = ens(&[&[1.0, 0.0], &[2.0, 0.0]]);
        assert!(matches!(
            energy_distance(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn null_draws_within_permutation_spread() {
        let mut r = rng::seeded(10);
        let p = DensityModel::standard_normal(2).unwrap();
        let a = p.sample(&mut r, 2000);
        let b = p.sample(&mut r, 2000);
        let ed = energy_distance(&a, &b).unwrap();
        let null = permutation_null(&a, &b, 20, &mut r, energy_distance).unwrap();
        assert!(
            ed.abs() < 3.0 * std_dev(&null),
            "ed {ed} null sd {}",
            std_dev(&null)
        );

        let a = p.sample(&mut r, 500);
        let b = p.sample(&mut r, 500);
        let mmd = |x: &ParticleEnsemble, y: &ParticleEnsemble| {
            mmd_rbf(x, y, Bandwidth::Median).map(|v| v.0)
        };
        let m = mmd(&a, &b).unwrap();
        let null = permutation_null(&a, &b, 20, &mut r, mmd).unwrap();
        assert!(
            m.abs() < 3.0 * std_dev(&null),
            "mmd {m} null sd {}",
            std_dev(&null)
        );
    }

    #[test]
    fn separated_gaussians_exceed_null() {
        let mut r = rng::seeded(12);
        let a = DensityModel::standard_normal(2)
            .unwrap()
            .sample(&mut r, 300);
        let b = DensityModel::gaussian(vec![8.0, 0.0], vec![1.0, 1.0])
            .unwrap()
            .sample(&mut r, 300);
        let mmd = |x: &ParticleEnsemble, y: &ParticleEnsemble| {
            mmd_rbf(x, y, Bandwidth::Median).map(|v| v.0)
        };
        let m = mmd(&a, &b).unwrap();
        let null = permutation_null(&a, &b, 20, &mut r, mmd).unwrap();
        assert!(m > 10.0 * std_dev(&null));
    }

    #[test]
    fn mmd_is_symmetric() {
        let mut r = rng::seeded(13);
        let a = DensityModel::standard_normal(2).unwrap().sample(&mut r, 50);
        let b = DensityModel::ring8().sample(&mut r, 70);
        let h = Bandwidth::Fixed(1.3);
        assert_eq!(mmd_rbf(&a, &b, h).unwrap().0, mmd_rbf(&b, &a, h).unwrap().0);
        assert_eq!(
            energy_distance(&a, &b).unwrap(),
            energy_distance(&b, &a).unwrap()
        );
        let c = DensityModel::ring8().sample(&mut r, 50);
        assert_eq!(mmd_rbf(&a, &c, h).unwrap().0, mmd_rbf(&c, &a, h).unwrap().0);
    }

    #[test]
    fn subsample_caps_size() {
        let mut r = rng::seeded(14);
        let x = DensityModel::standard_normal(1)
            .unwrap()
            .sample(&mut r, 100);
        assert_eq!(subsample(&x, 40, &mut r).len(), 40);
        assert_eq!(subsample(&x, 400, &mut r), x);
    }

    #[test]
    fn ring_samples_cover_all_modes() {
        let ring = DensityModel::ring8();
        let x = ring.sample(&mut rng::seeded(15), 8000);
        let cov = mode_coverage(&x, &ring.mode_centers()).unwrap();
        assert_eq!(cov.len(), 8);
        assert!(cov.iter().all(|c| (c - 0.125).abs() < 0.02), "{cov:?}");
    }

    #[test]
    fn coverage_counts_nearest_center() {
        let x = ens(&[&[0.1], &[0.2], &[0.9], &[5.0]]);
        let cov = mode_coverage(&x, &[vec![0.0], vec![1.0]]).unwrap();
        assert_eq!(cov, vec![0.5, 0.5]);
    }
}
