//! Particle transport along the f-divergence gradient flow.
//!
//! One inner iteration: (re)train the ratio classifier on target samples vs.
//! the current particles, evaluate `h(x) = -f''(r(x)) ∇r(x)`, and move every
//! particle with the residual map `x -> x + s h(x)`.

pub mod svgd;
pub mod verify;

pub use svgd::{median_bandwidth, svgd_direction, svgd_step, Bandwidth};

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::divergence::FDivergence;
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::ratio::{train_classifier, ClassifierTrainSpec, RatioEstimator};

#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub step_size: f64,
    pub inner_loops: usize,
    pub divergence: FDivergence,
    /// Rows with `‖h‖ > clip` are rescaled to norm `clip`. Off by default.
    pub velocity_clip: Option<f64>,
}

impl FlowConfig {
    pub fn new(divergence: FDivergence) -> Self {
        Self {
            step_size: 0.5,
            inner_loops: 20,
            divergence,
            velocity_clip: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step_size must be > 0"));
        }
        if self.inner_loops == 0 {
            return Err(Error::invalid("inner_loops must be >= 1"));
        }
        if let Some(c) = self.velocity_clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::invalid("velocity_clip must be > 0 when set"));
            }
        }
        Ok(())
    }
}

/// One row of flow telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRecord {
    pub outer: usize,
    pub inner: usize,
    /// `E ‖v‖²` over the particles, for the velocity actually applied.
    pub mean_sq_velocity: f64,
    /// Plug-in estimate `mean f(r̂(X_i))` over the target samples.
    pub divergence_estimate: f64,
    pub classifier_loss: Option<f64>,
    pub clamp_count: usize,
    pub clipped_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowTelemetry {
    pub records: Vec<TelemetryRecord>,
}

impl FlowTelemetry {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn set_outer(&mut self, outer: usize) {
        self.records.iter_mut().for_each(|r| r.outer = outer);
    }
}

#[derive(Debug, Clone)]
pub struct FieldEval {
    pub field: Array2<f64>,
    pub clamp_count: usize,
}

/// Evaluates `h(x) = -f''(r(x)) ∇r(x)` row-wise.
///
/// With the exact ratio and KL this is `score_p - score_q`.
pub fn vector_field(
    div: &FDivergence,
    est: &RatioEstimator,
    x: &ArrayView2<'_, f64>,
) -> Result<FieldEval> {
    let ev = est.ratio_and_grad(x)?;
    let mut field = ev.grads;
    for (index, (mut row, r)) in field.outer_iter_mut().zip(&ev.ratios).enumerate() {
        let curvature = div
            .f_second(*r)
            .map_err(|_| Error::NonFiniteField { index })?;
        row.mapv_inplace(|g| -curvature * g);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteField { index });
        }
    }
    Ok(FieldEval {
        field,
        clamp_count: ev.clamp_count,
    })
}

/// Rescales rows whose norm exceeds `clip`; returns how many were rescaled.
pub fn clip_rows(field: &mut Array2<f64>, clip: f64) -> usize {
    let mut clipped = 0;
    for mut row in field.outer_iter_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > clip {
            row *= clip / norm;
            clipped += 1;
        }
    }
    clipped
}

/// The residual map `x -> x + s h(x)` applied to every particle.
pub fn residual_apply(
    particles: &ParticleEnsemble,
    field: &ArrayView2<'_, f64>,
    s: f64,
) -> Result<ParticleEnsemble> {
    if field.dim() != particles.positions().dim() {
        return Err(Error::DimensionMismatch {
            context: "residual map field shape",
            expected: particles.len() * particles.dim(),
            found: field.len(),
        });
    }
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::invalid("step size must be finite and >= 0"));
    }
    let mut out = particles.clone();
    Zip::from(out.positions_mut())
        .and(field)
        .for_each(|p, &h| *p += s * h);
    ParticleEnsemble::new(out.into_positions())
}

fn mean_sq_norm(field: &Array2<f64>) -> f64 {
    if field.nrows() == 0 {
        return 0.0;
    }
    field.map_axis(Axis(1), |r| r.dot(&r)).mean().unwrap_or(0.0)
}

/// Plug-in divergence estimate `mean_i f(r̂(X_i))` over target samples.
pub fn plug_in_divergence(
    div: &FDivergence,
    est: &RatioEstimator,
    real: &ParticleEnsemble,
) -> Result<f64> {
    let log_r = est.log_ratios(&real.view())?;
    let mut total = 0.0;
    for (index, lr) in log_r.iter().enumerate() {
        let r = lr.exp().clamp(est.ratio_floor, est.ratio_ceiling);
        total += div.f(r).map_err(|_| Error::NonFiniteRatio {
            index,
            point: real.point(index).to_vec(),
            value: r,
        })?;
    }
    Ok(total / real.len().max(1) as f64)
}

/// Runs `config.inner_loops` iterations of
/// {train classifier; evaluate field; apply residual map}.
///
/// In exact mode the estimator is used as given and no training happens;
/// since the evolved density has no closed form after a generic step, exact
/// mode is only meaningful for single steps or translation-invariant cases.
pub fn inner_loop<R: Rng + ?Sized>(
    particles: &ParticleEnsemble,
    real_samples: &ParticleEnsemble,
    estimator: &mut RatioEstimator,
    classifier_spec: &ClassifierTrainSpec,
    config: &FlowConfig,
    rng: &mut R,
) -> Result<(ParticleEnsemble, FlowTelemetry)> {
    config.validate()?;
    if particles.dim() != estimator.dim() || real_samples.dim() != estimator.dim() {
        return Err(Error::DimensionMismatch {
            context: "flow particle dimension",
            expected: estimator.dim(),
            found: particles.dim(),
        });
    }
    let mut current = particles.clone();
    let mut telemetry = FlowTelemetry::default();
    for inner in 0..config.inner_loops {
        let classifier_loss = match estimator.classifier_mut() {
            Some(classifier) => {
                train_classifier(classifier, real_samples, &current, classifier_spec, rng)?
                    .final_loss
            }
            None => None,
        };
        let FieldEval {
            mut field,
            clamp_count,
        } = vector_field(&config.divergence, estimator, &current.view())?;
        let clipped_count = config.velocity_clip.map_or(0, |c| clip_rows(&mut field, c));
        let divergence_estimate = plug_in_divergence(&config.divergence, estimator, real_samples)?;
        telemetry.records.push(TelemetryRecord {
            outer: 0,
            inner,
            mean_sq_velocity: mean_sq_norm(&field),
            divergence_estimate,
            classifier_loss,
            clamp_count,
            clipped_count,
        });
        let mut next = current.into_positions();
        Zip::from(&mut next)
            .and(&field)
            .for_each(|p, &h| *p += config.step_size * h);
        if let Some(index) = next
            .outer_iter()
            .position(|r| r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFiniteParticle {
                inner_loop: inner,
                index,
            });
        }
        current = ParticleEnsemble::new(next)?;
    }
    Ok((current, telemetry))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::DensityModel;
    use crate::net::{Activation, Mlp};
    use crate::rng;
    use ndarray::array;
    use rand::Rng;

    fn pair_1d() -> (DensityModel, DensityModel) {
        (
            DensityModel::gaussian(vec![0.0], vec![1.0]).unwrap(),
            DensityModel::gaussian(vec![1.0], vec![1.0]).unwrap(),
        )
    }

    #[test]
    fn field_vanishes_when_equal() {
        let g = DensityModel::ring8();
        let est = RatioEstimator::exact(g.clone(), g).unwrap();
        let x = array![[1.0, 2.0], [0.0, -4.0]];
        for div in ["KL", "JS", "logD", "Jeffrey"] {
            let h = vector_field(&FDivergence::by_name(div).unwrap(), &est, &x.view()).unwrap();
            assert!(h.field.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn kl_field_is_constant_for_shifted_gaussians() {
        let (q, p) = pair_1d();
        let est = RatioEstimator::exact(q, p).unwrap();
        let x = array![[-3.0], [0.0], [0.5], [2.0]];
        let h = vector_field(&FDivergence::kl(), &est, &x.view()).unwrap();
        for v in h.field.iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn js_field_at_unit_ratio() {
        let (q, p) = pair_1d();
        let est = RatioEstimator::exact(q, p).unwrap();
        let h = vector_field(&FDivergence::js(), &est, &array![[0.5]].view()).unwrap();
        assert!((h.field[[0, 0]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_field_equals_score_difference() {
        let mut r = rng::seeded(31);
        let q = DensityModel::ring8();
        let p = DensityModel::gaussian(vec![0.5, -1.0], vec![2.0, 3.0]).unwrap();
        let est = RatioEstimator::exact(q.clone(), p.clone()).unwrap();
        let x = Array2::from_shape_fn((100, 2), |_| r.random_range(-3.0..3.0));
        let h = vector_field(&FDivergence::kl(), &est, &x.view()).unwrap();
        for (row, hrow) in x.outer_iter().zip(h.field.outer_iter()) {
            let pt = row.to_vec();
            let (sp, sq) = (p.score(&pt), q.score(&pt));
            let err: f64 = (0..2)
                .map(|k| (hrow[k] - (sp[k] - sq[k])).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(err < 1e-10);
        }
    }

    #[test]
    fn residual_map_basics() {
        let e = ParticleEnsemble::from_rows(&[vec![0.0, 1.0], vec![2.0, -1.0]]).unwrap();
        let f = array![[1.0, 0.0], [1.0, 0.0]];
        assert_eq!(residual_apply(&e, &f.view(), 0.0).unwrap(), e);
        let moved = residual_apply(&e, &f.view(), 0.5).unwrap();
        assert_eq!(moved.point(0), &[0.5, 1.0]);
        assert_eq!(moved.point(1), &[2.5, -1.0]);
        assert!(residual_apply(&e, &array![[1.0, 0.0]].view(), 0.5).is_err());
    }

    #[test]
    fn clipping_bounds_row_norms() {
        let mut f = array![[3.0, 4.0], [0.3, 0.4]];
        assert_eq!(clip_rows(&mut f, 1.0), 1);
        assert!((f[[0, 0]] - 0.6).abs() < 1e-15 && (f[[0, 1]] - 0.8).abs() < 1e-15);
        assert_eq!(f[[1, 0]], 0.3);
    }

    #[test]
    fn zero_classifier_without_training_does_not_move() {
        let mut r = rng::seeded(5);
        let g = DensityModel::standard_normal(2).unwrap();
        let z = g.sample(&mut r, 50);
        let x = DensityModel::gaussian(vec![3.0, 3.0], vec![1.0, 1.0])
            .unwrap()
            .sample(&mut r, 50);
        let mut est = RatioEstimator::learned(
            Mlp::zeros(&[2, 8, 1], Activation::Relu, Activation::Identity).unwrap(),
        )
        .unwrap();
        let spec = ClassifierTrainSpec {
            steps: 0,
            ..Default::default()
        };
        let mut cfg = FlowConfig::new(FDivergence::kl());
        cfg.inner_loops = 1;
        let (moved, tel) = inner_loop(&z, &x, &mut est, &spec, &cfg, &mut r).unwrap();
        assert_eq!(moved, z);
        assert_eq!(tel.len(), 1);
        assert_eq!(tel.records[0].mean_sq_velocity, 0.0);
    }

    #[test]
    fn residual_steps_match_frozen_inner_loop() {
        let mut r = rng::seeded(6);
        let mut net = Mlp::new(&[2, 8, 1], Activation::Relu, Activation::Identity, &mut r).unwrap();
        net.set_params(net.params().iter().map(|v| 0.1 * v).collect())
            .unwrap();
        let z = DensityModel::standard_normal(2).unwrap().sample(&mut r, 20);
        let x = z.clone();
        let est = RatioEstimator::learned(net).unwrap();
        let div = FDivergence::js();
        let s = 0.3;
        let mut manual = z.clone();
        for _ in 0..2 {
            let h = vector_field(&div, &est, &manual.view()).unwrap();
            manual = residual_apply(&manual, &h.field.view(), s).unwrap();
        }
        let spec = ClassifierTrainSpec {
            steps: 0,
            ..Default::default()
        };
        let cfg = FlowConfig {
            step_size: s,
            inner_loops: 2,
            divergence: div,
            velocity_clip: None,
        };
        let mut est2 = est.clone();
        let (looped, tel) = inner_loop(&z, &x, &mut est2, &spec, &cfg, &mut r).unwrap();
        assert_eq!(looped, manual);
        assert_eq!(tel.len(), 2);
    }
}
