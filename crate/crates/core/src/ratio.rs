//! Density-ratio estimation `r(x) = q(x) / p(x)` and its spatial gradient.
//!
//! Two routes: the exact ratio from analytic densities, or a logistic
//! classifier `D` trained to separate target samples (label +1) from
//! particles (label -1) with balanced classes, whose minimiser satisfies
//! `r(x) = exp(-D(x))`.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::DensityModel;
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::net::{Mlp, RmsPropConfig};

pub const DEFAULT_RATIO_FLOOR: f64 = 1e-8;
pub const DEFAULT_RATIO_CEILING: f64 = 1e8;

#[derive(Debug, Clone)]
pub enum RatioMode {
    Exact { q: DensityModel, p: DensityModel },
    Learned { classifier: Mlp },
}

#[derive(Debug, Clone)]
pub struct RatioEstimator {
    pub mode: RatioMode,
    pub ratio_floor: f64,
    pub ratio_ceiling: f64,
}

/// Ratio values and gradients at a batch of points.
///
/// `ratios` are clamped to `[floor, ceiling]`; `raw_ratios` are not.
/// `grads = ratios * grad_log_ratios` row-wise, i.e. the clamped ratio is the
/// one carried into the gradient.
#[derive(Debug, Clone)]
pub struct RatioEval {
    pub ratios: Vec<f64>,
    pub raw_ratios: Vec<f64>,
    pub grad_log_ratios: Array2<f64>,
    pub grads: Array2<f64>,
    pub clamp_count: usize,
}

impl RatioEstimator {
    pub fn exact(q: DensityModel, p: DensityModel) -> Result<Self> {
        if q.dim() != p.dim() {
            return Err(Error::DimensionMismatch {
                context: "exact ratio densities",
                expected: p.dim(),
                found: q.dim(),
            });
        }
        Ok(Self {
            mode: RatioMode::Exact { q, p },
            ratio_floor: DEFAULT_RATIO_FLOOR,
            ratio_ceiling: DEFAULT_RATIO_CEILING,
        })
    }

    pub fn learned(classifier: Mlp) -> Result<Self> {
        if classifier.output_dim() != 1 {
            return Err(Error::DimensionMismatch {
                context: "classifier output width",
                expected: 1,
                found: classifier.output_dim(),
            });
        }
        Ok(Self {
            mode: RatioMode::Learned { classifier },
            ratio_floor: DEFAULT_RATIO_FLOOR,
            ratio_ceiling: DEFAULT_RATIO_CEILING,
        })
    }

    pub fn with_bounds(mut self, floor: f64, ceiling: f64) -> Result<Self> {
        if !(floor > 0.0 && floor < ceiling && ceiling.is_finite()) {
            return Err(Error::invalid(
                "ratio bounds need 0 < floor < ceiling < inf",
            ));
        }
        self.ratio_floor = floor;
        self.ratio_ceiling = ceiling;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        match &self.mode {
            RatioMode::Exact { p, .. } => p.dim(),
            RatioMode::Learned { classifier } => classifier.input_dim(),
        }
    }

    pub fn classifier(&self) -> Option<&Mlp> {
        match &self.mode {
            RatioMode::Learned { classifier } => Some(classifier),
            RatioMode::Exact { .. } => None,
        }
    }

    pub fn classifier_mut(&mut self) -> Option<&mut Mlp> {
        match &mut self.mode {
            RatioMode::Learned { classifier } => Some(classifier),
            RatioMode::Exact { .. } => None,
        }
    }

    fn clamp(&self, r: f64) -> (f64, bool) {
        if r < self.ratio_floor {
            (self.ratio_floor, true)
        } else if r > self.ratio_ceiling {
            (self.ratio_ceiling, true)
        } else {
            (r, false)
        }
    }

    /// Log-ratio at each row (unclamped).
    pub fn log_ratios(&self, x: &ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        match &self.mode {
            RatioMode::Exact { q, p } => x
                .outer_iter()
                .map(|row| {
                    let row = row.to_vec();
                    crate::density::exact_log_ratio(q, p, &row)
                })
                .collect(),
            RatioMode::Learned { classifier } => {
                let d = classifier.forward(x)?;
                d.column(0)
                    .iter()
                    .enumerate()
                    .map(|(row, v)| {
                        if v.is_finite() {
                            Ok(-v)
                        } else {
                            Err(Error::NonFiniteOutput { row })
                        }
                    })
                    .collect()
            }
        }
    }

    /// Clamped ratio at a single point; convenient for Monte-Carlo plug-ins.
    pub fn ratio_at(&self, x: &[f64]) -> Result<f64> {
        let view =
            ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::invalid(e.to_string()))?;
        let lr = self.log_ratios(&view)?[0];
        Ok(self.clamp(lr.exp()).0)
    }

    pub fn ratio_and_grad(&self, x: &ArrayView2<'_, f64>) -> Result<RatioEval> {
        self.check_dim(x)?;
        let n = x.nrows();
        let (log_r, grad_log) = match &self.mode {
            RatioMode::Exact { q, p } => {
                let mut log_r = Vec::with_capacity(n);
                let mut grad_log = Array2::zeros(x.raw_dim());
                let mut sq = vec![0.0; x.ncols()];
                let mut sp = vec![0.0; x.ncols()];
                for (i, row) in x.outer_iter().enumerate() {
                    let row = row.to_vec();
                    log_r.push(crate::density::exact_log_ratio(q, p, &row)?);
                    q.score_into(&row, &mut sq);
                    p.score_into(&row, &mut sp);
                    for (k, g) in grad_log.row_mut(i).iter_mut().enumerate() {
                        *g = sq[k] - sp[k];
                    }
                }
                (log_r, grad_log)
            }
            RatioMode::Learned { classifier } => {
                let tape = classifier.tape(x)?;
                let d = tape.output().column(0);
                if let Some(row) = d.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteOutput { row });
                }
                let ones = Array2::ones((n, 1));
                let grad_d = classifier
                    .backward_tape(&tape, &ones.view(), false, true)?
                    .1
                    .expect("requested");
                let log_r: Vec<f64> = d.iter().map(|v| -v).collect();
                (log_r, -grad_d)
            }
        };
        let mut ratios = Vec::with_capacity(n);
        let mut raw_ratios = Vec::with_capacity(n);
        let mut clamp_count = 0;
        for lr in log_r {
            let raw = lr.exp();
            let (r, clamped) = self.clamp(raw);
            clamp_count += usize::from(clamped);
            raw_ratios.push(raw);
            ratios.push(r);
        }
        let mut grads = grad_log.clone();
        for (mut row, r) in grads.outer_iter_mut().zip(&ratios) {
            row.mapv_inplace(|g| g * r);
        }
        Ok(RatioEval {
            ratios,
            raw_ratios,
            grad_log_ratios: grad_log,
            grads,
            clamp_count,
        })
    }

    fn check_dim(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "ratio estimator input",
                expected: self.dim(),
                found: x.ncols(),
            });
        }
        Ok(())
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `mean softplus(-D(X_i)) + mean softplus(D(Z_i))` over target samples `X`
/// and particles `Z`.
pub fn logistic_loss(d_values_real: &[f64], d_values_generated: &[f64]) -> Result<f64> {
    if d_values_real.is_empty() || d_values_generated.is_empty() {
        return Err(Error::TooFewPoints {
            context: "logistic_loss",
            required: 1,
            found: 0,
        });
    }
    let real = d_values_real.iter().map(|d| softplus(-d)).sum::<f64>() / d_values_real.len() as f64;
    let generated = d_values_generated.iter().map(|d| softplus(*d)).sum::<f64>()
        / d_values_generated.len() as f64;
    Ok(real + generated)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierTrainSpec {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: RmsPropConfig,
    pub warm_start: bool,
}

impl Default for ClassifierTrainSpec {
    fn default() -> Self {
        Self {
            steps: 100,
            batch_size: 64,
            optimizer: RmsPropConfig::default(),
            warm_start: true,
        }
    }
}

impl ClassifierTrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("classifier batch_size must be >= 1"));
        }
        self.optimizer.validate()
    }
}

/// Outcome of a classifier training call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierFit {
    /// Loss of the last minibatch, measured before its update. `None` when
    /// no step was taken.
    pub final_loss: Option<f64>,
    pub steps: usize,
    /// Total target samples drawn across all minibatches.
    pub real_draws: usize,
    /// Total particle samples drawn across all minibatches.
    pub generated_draws: usize,
}

/// Runs `spec.steps` RMSProp steps on the logistic loss. Each minibatch
/// holds exactly `batch_size` target samples and `batch_size` particles,
/// drawn uniformly with replacement, whatever the ensemble sizes.
pub fn train_classifier<R: Rng + ?Sized>(
    classifier: &mut Mlp,
    real_samples: &ParticleEnsemble,
    generated_samples: &ParticleEnsemble,
    spec: &ClassifierTrainSpec,
    rng: &mut R,
) -> Result<ClassifierFit> {
    if real_samples.dim() != generated_samples.dim() {
        return Err(Error::DimensionMismatch {
            context: "classifier training ensembles",
            expected: real_samples.dim(),
            found: generated_samples.dim(),
        });
    }
    if classifier.input_dim() != real_samples.dim() {
        return Err(Error::DimensionMismatch {
            context: "classifier input width",
            expected: classifier.input_dim(),
            found: real_samples.dim(),
        });
    }
    if real_samples.is_empty() || generated_samples.is_empty() {
        return Err(Error::TooFewPoints {
            context: "train_classifier",
            required: 1,
            found: 0,
        });
    }
    spec.validate()?;
    let b = spec.batch_size;
    let d = real_samples.dim();
    let mut fit = ClassifierFit {
        final_loss: None,
        steps: 0,
        real_draws: 0,
        generated_draws: 0,
    };
    let mut batch = Array2::zeros((2 * b, d));
    for _ in 0..spec.steps {
        for i in 0..b {
            let k = rng.random_range(0..real_samples.len());
            batch
                .row_mut(i)
                .assign(&ndarray::aview1(real_samples.point(k)));
        }
        for i in 0..b {
            let k = rng.random_range(0..generated_samples.len());
            batch
                .row_mut(b + i)
                .assign(&ndarray::aview1(generated_samples.point(k)));
        }
        fit.real_draws += b;
        fit.generated_draws += b;

        let tape = classifier.tape(&batch.view())?;
        let logits = tape.output().column(0);
        if let Some(row) = logits.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteOutput { row });
        }
        let (real, generated) = logits.as_slice().map_or_else(
            || {
                let v = logits.to_vec();
                (v[..b].to_vec(), v[b..].to_vec())
            },
            |s| (s[..b].to_vec(), s[b..].to_vec()),
        );
        let loss = logistic_loss(&real, &generated)?;
        let scale = 1.0 / b as f64;
        let mut upstream = Array2::zeros((2 * b, 1));
        for i in 0..b {
            upstream[[i, 0]] = -sigmoid(-real[i]) * scale;
            upstream[[b + i, 0]] = sigmoid(generated[i]) * scale;
        }
        let grad = classifier.grad_params_tape(&tape, &upstream.view())?;
        classifier.rmsprop_step(&grad, &spec.optimizer)?;
        fit.final_loss = Some(loss);
        fit.steps += 1;
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Activation;
    use crate::rng;
    use ndarray::array;
    use std::f64::consts::LN_2;

    #[test]
    fn loss_values() {
        assert!((logistic_loss(&[0.0, 0.0], &[0.0]).unwrap() - 2.0 * LN_2).abs() < 1e-15);
        let good = logistic_loss(&[50.0], &[-50.0]).unwrap();
        assert!(good >= 0.0 && (good - 2.0 * (-50f64).exp()).abs() < 1e-30);
        let bad = logistic_loss(&[-50.0], &[50.0]).unwrap();
        assert!((bad - 100.0).abs() < 1e-12);
        assert!(logistic_loss(&[], &[1.0]).is_err());
        assert!(logistic_loss(&[1e300], &[-1e300]).unwrap().is_finite());
    }

    #[test]
    fn exact_ratio_unit_when_equal() {
        let g = DensityModel::gaussian(vec![0.0, 1.0], vec![1.0, 2.0]).unwrap();
        let est = RatioEstimator::exact(g.clone(), g).unwrap();
        let x = array![[0.1, 0.2], [3.0, -1.0]];
        let ev = est.ratio_and_grad(&x.view()).unwrap();
        assert!(ev.ratios.iter().all(|r| *r == 1.0));
        assert!(ev.grads.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn exact_ratio_gaussian_pair() {
        let q = DensityModel::gaussian(vec![0.0], vec![1.0]).unwrap();
        let p = DensityModel::gaussian(vec![1.0], vec![1.0]).unwrap();
        let est = RatioEstimator::exact(q, p).unwrap();
        let ev = est.ratio_and_grad(&array![[0.5]].view()).unwrap();
        assert!((ev.ratios[0] - 1.0).abs() < 1e-15);
        assert!((ev.grads[[0, 0]] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_classifier_gives_unit_ratio() {
        let net = Mlp::zeros(&[2, 8, 1], Activation::Relu, Activation::Identity).unwrap();
        let est = RatioEstimator::learned(net).unwrap();
        let ev = est
            .ratio_and_grad(&array![[1.0, 2.0], [-3.0, 0.5]].view())
            .unwrap();
        assert_eq!(ev.ratios, vec![1.0, 1.0]);
        assert!(ev.grads.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn clamping_is_counted() {
        let q = DensityModel::gaussian(vec![0.0], vec![1.0]).unwrap();
        let p = DensityModel::gaussian(vec![10.0], vec![1.0]).unwrap();
        let est = RatioEstimator::exact(q, p).unwrap();
        // log r = 50 - 10x: huge at x = 0, tiny at x = 10
        let ev = est
            .ratio_and_grad(&array![[0.0], [5.0], [10.0]].view())
            .unwrap();
        assert_eq!(ev.clamp_count, 2);
        assert_eq!(ev.ratios[0], DEFAULT_RATIO_CEILING);
        assert_eq!(ev.ratios[2], DEFAULT_RATIO_FLOOR);
        assert!(ev.raw_ratios[0] > DEFAULT_RATIO_CEILING);
        assert_eq!(ev.ratios[1], 1.0);
    }

    #[test]
    fn nan_classifier_output_is_an_error() {
        let mut net = Mlp::zeros(&[1, 1], Activation::Identity, Activation::Identity).unwrap();
        net.set_params(vec![f64::NAN, 0.0]).unwrap();
        let est = RatioEstimator::learned(net).unwrap();
        assert!(matches!(
            est.ratio_and_grad(&array![[1.0]].view()),
            Err(Error::NonFiniteOutput { row: 0 })
        ));
    }

    #[test]
    fn zero_steps_leave_classifier_unchanged() {
        let mut r = rng::seeded(2);
        let mut net = Mlp::new(&[1, 4, 1], Activation::Relu, Activation::Identity, &mut r).unwrap();
        let before = net.clone();
        let a = DensityModel::standard_normal(1).unwrap().sample(&mut r, 10);
        let spec = ClassifierTrainSpec {
            steps: 0,
            ..Default::default()
        };
        let fit = train_classifier(&mut net, &a, &a, &spec, &mut r).unwrap();
        assert_eq!(net, before);
        assert_eq!(fit.final_loss, None);
    }

    #[test]
    fn minibatches_are_balanced() {
        let mut r = rng::seeded(3);
        let mut net = Mlp::new(&[2, 4, 1], Activation::Relu, Activation::Identity, &mut r).unwrap();
        let g = DensityModel::standard_normal(2).unwrap();
        let real = g.sample(&mut r, 7);
        let generated = g.sample(&mut r, 1000);
        let spec = ClassifierTrainSpec {
            steps: 13,
            batch_size: 32,
            ..Default::default()
        };
        let fit = train_classifier(&mut net, &real, &generated, &spec, &mut r).unwrap();
        assert_eq!(fit.real_draws, 13 * 32);
        assert_eq!(fit.generated_draws, fit.real_draws);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut r = rng::seeded(4);
        let mut net = Mlp::new(&[2, 4, 1], Activation::Relu, Activation::Identity, &mut r).unwrap();
        let a = DensityModel::standard_normal(2).unwrap().sample(&mut r, 5);
        let b = DensityModel::standard_normal(3).unwrap().sample(&mut r, 5);
        assert!(
            train_classifier(&mut net, &a, &b, &ClassifierTrainSpec::default(), &mut r).is_err()
        );
    }
}
