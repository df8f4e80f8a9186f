//! Self-contained verification suites behind `vgrow verify <suite>`.
//!
//! Each suite returns one [`Check`] per assertion with the measured value
//! and the tolerance it was held to.

use std::f64::consts::LN_2;
use std::fmt;

use rand::Rng;
use serde::Serialize;

use crate::density::{exact_log_ratio, DensityModel};
use crate::divergence::{divergence_quadrature_1d, logd_gan_objective_1d, FDivergence};
use crate::ensemble::ParticleEnsemble;
use crate::error::Result;
use crate::flow::verify::{
    directional_derivative, grid_flow_divergences, kl_continuous_sequence, verify_decay,
    verify_vfp_residual, Bump,
};
use crate::flow::{svgd_direction, svgd_step, Bandwidth};
use crate::generator::NetSpec;
use crate::metrics::{energy_distance, energy_noise_floor};
use crate::net::{Activation, InputNorm, Mlp, RmsPropConfig};
use crate::quadrature::Grid1d;
use crate::ratio::{train_classifier, ClassifierTrainSpec};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Lemma2,
    Vfp,
    Theorem1,
    Theorem3,
    Lemma3,
    Svgd,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Lemma2,
        Suite::Vfp,
        Suite::Theorem1,
        Suite::Theorem3,
        Suite::Lemma3,
        Suite::Svgd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Lemma2 => "lemma2",
            Suite::Vfp => "vfp",
            Suite::Theorem1 => "theorem1",
            Suite::Theorem3 => "theorem3",
            Suite::Lemma3 => "lemma3",
            Suite::Svgd => "svgd",
        }
    }

    pub fn run(self, seed: u64) -> Result<Vec<Check>> {
        match self {
            Suite::Lemma2 => decay_suite(),
            Suite::Vfp => vfp(),
            Suite::Theorem1 => directional_suite(seed),
            Suite::Theorem3 => logd_identity_suite(),
            Suite::Lemma3 => ratio_recovery_suite(seed),
            Suite::Svgd => svgd(seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `measured < tolerance`
    Below,
    /// `measured <= tolerance`
    AtMost,
    /// `measured >= tolerance`
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub relation: Relation,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, measured: f64, relation: Relation, tolerance: f64) -> Self {
        let passed = match relation {
            Relation::Below => measured < tolerance,
            Relation::AtMost => measured <= tolerance,
            Relation::AtLeast => measured >= tolerance,
        };
        Self {
            name: name.into(),
            measured,
            relation,
            tolerance,
            passed,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.relation {
            Relation::Below => "<",
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
        };
        write!(
            f,
            "{} {}: {:.6e} (need {} {:e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            op,
            self.tolerance
        )
    }
}

fn gauss(mean: f64, var: f64) -> Result<DensityModel> {
    DensityModel::gaussian(vec![mean], vec![var])
}

const DIVERGENCES: [&str; 4] = ["KL", "JS", "logD", "Jeffrey"];

/// Exact-ratio flow of `N(0,1)` toward `N(1,1)` on a Lagrangian grid: the
/// divergence must never rise by more than 1e-6 across 20 steps of 0.05.
fn decay_suite() -> Result<Vec<Check>> {
    let q0 = gauss(0.0, 1.0)?;
    let p = gauss(1.0, 1.0)?;
    let nodes = Grid1d::new(-12.0, 12.0, 401)?;
    let mut checks = Vec::new();
    for name in DIVERGENCES {
        let div = FDivergence::by_name(name)?;
        let seq = grid_flow_divergences(&div, &q0, &p, 0.05, 20, &nodes)?;
        let report = verify_decay(&seq, 1e-6);
        checks.push(Check::new(
            format!("{name} largest step increase"),
            report.max_increase,
            Relation::AtMost,
            1e-6,
        ));
        checks.push(Check::new(
            format!("{name} total decrease"),
            seq[0] - seq[seq.len() - 1],
            Relation::AtLeast,
            0.0,
        ));
    }
    let nodes = Grid1d::new(-10.0, 10.0, 801)?;
    let tracked = grid_flow_divergences(&FDivergence::kl(), &q0, &p, 0.05, 20, &nodes)?;
    let closed = kl_continuous_sequence(0.0, 1.0, 1.0, 0.05, 20);
    let gap = tracked
        .iter()
        .zip(&closed)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    checks.push(Check::new(
        "KL tracker vs closed form",
        gap,
        Relation::Below,
        1e-6,
    ));
    Ok(checks)
}

/// Residual of the first-order continuity prediction for the one-step
/// pushforward; it must shrink at least like `s^1.8`.
fn vfp() -> Result<Vec<Check>> {
    let q0 = gauss(0.0, 1.0)?;
    let p = gauss(0.5, 0.5)?;
    let grid = Grid1d::new(-10.0, 10.0, 4001)?;
    let s_values = [1e-2, 5e-3, 2.5e-3];
    let mut checks = Vec::new();
    for name in ["JS", "Jeffrey", "KL"] {
        let report = verify_vfp_residual(&q0, &p, &FDivergence::by_name(name)?, &s_values, &grid)?;
        checks.push(Check::new(
            format!("{name} log-log slope of E(s)"),
            report.slope,
            Relation::AtLeast,
            1.8,
        ));
    }
    Ok(checks)
}

/// Quadrature of `<f''(r) ∇r, g>` against a central difference of the
/// pushforward divergence, for three random bumps.
fn directional_suite(seed: u64) -> Result<Vec<Check>> {
    let q = gauss(0.0, 1.0)?;
    let p = gauss(1.0, 1.5)?;
    let grid = Grid1d::new(-12.0, 12.0, 12001)?;
    let mut r = rng::stream(seed, rng::streams::EVALUATION);
    let bumps: Vec<Bump> = (0..3)
        .map(|_| Bump {
            center: r.random_range(-1.5..1.5),
            width: r.random_range(0.5..1.5),
            amplitude: r.random_range(0.3..1.0) * if r.random_bool(0.5) { 1.0 } else { -1.0 },
        })
        .collect();
    let mut checks = Vec::new();
    for name in DIVERGENCES {
        let div = FDivergence::by_name(name)?;
        for (k, g) in bumps.iter().enumerate() {
            let d = directional_derivative(&div, &q, &p, g, &grid, 1e-4)?;
            checks.push(Check::new(
                format!("{name} bump {k} relative error"),
                d.relative_error(),
                Relation::Below,
                1e-3,
            ));
        }
    }
    Ok(checks)
}

/// logD-trick objective at the optimal discriminator, minus `2 log 2`,
/// against the logD divergence.
fn logd_identity_suite() -> Result<Vec<Check>> {
    let pairs = [
        ((0.0, 1.0), (1.0, 1.0)),
        ((0.0, 4.0), (0.0, 1.0)),
        ((-1.0, 0.5), (1.0, 2.0)),
        ((2.0, 1.5), (-0.5, 0.7)),
        ((0.3, 3.0), (0.0, 1.0)),
    ];
    let grid = Grid1d::new(-20.0, 20.0, 16001)?;
    let div = FDivergence::log_d();
    let mut checks = Vec::new();
    for ((mq, vq), (mp, vp)) in pairs {
        let q = gauss(mq, vq)?;
        let p = gauss(mp, vp)?;
        let gan = logd_gan_objective_1d(&q, &p, &grid)?;
        let d = divergence_quadrature_1d(&div, &q, &p, &grid)?;
        checks.push(Check::new(
            format!("q=N({mq},{vq}) p=N({mp},{vp}) |objective - 2 log 2 - D|"),
            (gan - 2.0 * LN_2 - d).abs(),
            Relation::Below,
            1e-6,
        ));
    }
    Ok(checks)
}

/// Classifier settings used by the ratio-recovery suite.
pub fn ratio_recovery_classifier() -> (NetSpec, ClassifierTrainSpec) {
    let net = NetSpec {
        hidden: vec![64, 64],
        activation: Activation::Relu,
        output: Activation::Identity,
        standardize_input: true,
    };
    let spec = ClassifierTrainSpec {
        steps: 2000,
        batch_size: 256,
        optimizer: RmsPropConfig::default(),
        warm_start: true,
    };
    (net, spec)
}

/// Trains a fresh classifier on `real` (target) vs `generated` samples.
pub fn train_ratio_classifier<R: Rng + ?Sized>(
    real: &ParticleEnsemble,
    generated: &ParticleEnsemble,
    rng: &mut R,
) -> Result<Mlp> {
    let (net, spec) = ratio_recovery_classifier();
    let mut classifier = net.build(real.dim(), 1, rng)?;
    let pooled =
        ParticleEnsemble::from_flat(real.dim(), [real.as_slice(), generated.as_slice()].concat())?;
    classifier.set_input_norm(Some(InputNorm::fit(&pooled.view())?))?;
    train_classifier(&mut classifier, real, generated, &spec, rng)?;
    Ok(classifier)
}

/// Mean over `[-4, 4]` of `|exp(-D) - r| / (1 + r)`.
pub fn normalized_ratio_error(classifier: &Mlp, q: &DensityModel, p: &DensityModel) -> Result<f64> {
    let grid = Grid1d::new(-4.0, 4.0, 801)?;
    let xs = ParticleEnsemble::from_flat(1, grid.points())?;
    let d = classifier.forward(&xs.view())?;
    let mut total = 0.0;
    for (i, x) in grid.points().into_iter().enumerate() {
        let r = exact_log_ratio(q, p, &[x])?.exp();
        total += ((-d[[i, 0]]).exp() - r).abs() / (1.0 + r);
    }
    Ok(total / grid.n as f64)
}

fn ratio_recovery_suite(seed: u64) -> Result<Vec<Check>> {
    let q = gauss(-2.0, 1.0)?;
    let p = gauss(2.0, 1.0)?;
    let mut r = rng::stream(seed, rng::streams::CLASSIFIER_BATCHES);
    let real = p.sample(&mut r, 10_000);
    let generated = q.sample(&mut r, 10_000);
    let classifier = train_ratio_classifier(&real, &generated, &mut r)?;
    let err = normalized_ratio_error(&classifier, &q, &p)?;

    let a = p.sample(&mut r, 10_000);
    let b = p.sample(&mut r, 10_000);
    let same = train_ratio_classifier(&a, &b, &mut r)?;
    let held_out = p.sample(&mut r, 10_000);
    let d = same.forward(&held_out.view())?;
    let mean_abs_d = d.iter().map(|v| v.abs()).sum::<f64>() / d.len() as f64;
    Ok(vec![
        Check::new(
            "normalized ratio error on [-4, 4]",
            err,
            Relation::Below,
            0.05,
        ),
        Check::new("mean |D| when q = p", mean_abs_d, Relation::Below, 0.1),
    ])
}

/// Number of SVGD iterations and step size used by the convergence check.
pub const SVGD_ITERATIONS: usize = 500;
pub const SVGD_STEP: f64 = 0.3;

fn svgd(seed: u64) -> Result<Vec<Check>> {
    let target = DensityModel::standard_normal(2)?;
    let mut r = rng::stream(seed, rng::streams::EVALUATION);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let x0 = vec![r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)];
        let z = ParticleEnsemble::from_rows(std::slice::from_ref(&x0))?;
        let phi = svgd_direction(&z, &target, Bandwidth::Fixed(r.random_range(0.1..2.0)))?;
        for c in 0..2 {
            worst = worst.max((phi[[0, c]] + x0[c]).abs());
        }
    }
    let mut checks = vec![Check::new(
        "single particle |direction + x0|",
        worst,
        Relation::AtMost,
        0.0,
    )];

    let floor = energy_noise_floor(&target, 500, 10, &mut r)?;
    let reference = target.sample(&mut r, 500);
    let start = DensityModel::gaussian(vec![2.0, -1.5], vec![0.25, 0.25])?;
    let mut particles = start.sample(&mut r, 500);
    let mut best = f64::INFINITY;
    for it in 1..=SVGD_ITERATIONS {
        particles = svgd_step(&particles, &target, Bandwidth::Median, SVGD_STEP)?;
        if it % 10 == 0 {
            best = best.min(energy_distance(&particles, &reference)?);
            if best < 3.0 * floor.mean_abs {
                break;
            }
        }
    }
    checks.push(Check::new(
        format!(
            "500-particle energy distance vs 3x noise floor ({:.3e})",
            floor.mean_abs
        ),
        best,
        Relation::Below,
        3.0 * floor.mean_abs,
    ));
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_relations() {
        assert!(Check::new("a", 0.5, Relation::Below, 1.0).passed);
        assert!(!Check::new("a", 1.0, Relation::Below, 1.0).passed);
        assert!(Check::new("a", 1.0, Relation::AtMost, 1.0).passed);
        assert!(Check::new("a", 2.0, Relation::AtLeast, 1.8).passed);
        assert!(!Check::new("a", f64::NAN, Relation::AtLeast, 1.8).passed);
        assert!(!Check::new("a", f64::NAN, Relation::Below, 1.8).passed);
    }

    #[test]
    fn logd_identity_suite_passes() {
        assert!(logd_identity_suite().unwrap().iter().all(|c| c.passed));
    }
}
