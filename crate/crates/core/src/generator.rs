//! The outer loop: sample latents, push them through the generator, move the
//! particles with the flow, then refit the generator to the moved particles.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::density::DensityModel;
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::flow::{inner_loop, FlowConfig, FlowTelemetry, TelemetryRecord};
use crate::net::{Activation, InputNorm, Mlp, RmsPropConfig};
use crate::ratio::{
    ClassifierTrainSpec, RatioEstimator, DEFAULT_RATIO_CEILING, DEFAULT_RATIO_FLOOR,
};
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentKind {
    /// `N(0, I)`.
    #[default]
    Normal,
    /// Uniform on `[-1, 1]^ℓ`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub output: Activation,
    /// Standardize inputs with the mean and spread of the first target
    /// sample. Only meaningful for the classifier.
    pub standardize_input: bool,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Relu,
            output: Activation::Identity,
            standardize_input: false,
        }
    }
}

impl NetSpec {
    pub fn layer_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(output);
        sizes
    }

    pub fn build<R: Rng + ?Sized>(&self, input: usize, output: usize, rng: &mut R) -> Result<Mlp> {
        Mlp::new(
            &self.layer_sizes(input, output),
            self.activation,
            self.output,
            rng,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorFitSpec {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: RmsPropConfig,
}

impl Default for GeneratorFitSpec {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 64,
            optimizer: RmsPropConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VGrowConfig {
    pub latent_dim: usize,
    pub latent: LatentKind,
    pub outer_loops: usize,
    pub flow: FlowConfig,
    pub classifier: ClassifierTrainSpec,
    pub generator_fit: GeneratorFitSpec,
    pub generator_net: NetSpec,
    pub classifier_net: NetSpec,
    pub particles_per_loop: usize,
    pub snapshot_every: usize,
    pub ratio_floor: f64,
    pub ratio_ceiling: f64,
    pub seed: u64,
}

impl VGrowConfig {
    pub fn new(flow: FlowConfig, outer_loops: usize, seed: u64) -> Self {
        Self {
            latent_dim: 2,
            latent: LatentKind::Normal,
            outer_loops,
            flow,
            classifier: ClassifierTrainSpec::default(),
            generator_fit: GeneratorFitSpec::default(),
            generator_net: NetSpec::default(),
            classifier_net: NetSpec::default(),
            particles_per_loop: 2000,
            snapshot_every: 1,
            ratio_floor: DEFAULT_RATIO_FLOOR,
            ratio_ceiling: DEFAULT_RATIO_CEILING,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::invalid("latent_dim must be >= 1"));
        }
        if self.particles_per_loop == 0 {
            return Err(Error::invalid("particles_per_loop must be >= 1"));
        }
        if self.snapshot_every == 0 {
            return Err(Error::invalid("snapshot_every must be >= 1"));
        }
        if self.generator_fit.batch_size == 0 {
            return Err(Error::invalid("generator_fit batch_size must be >= 1"));
        }
        self.generator_fit.optimizer.validate()?;
        self.classifier.validate()?;
        self.flow.validate()
    }
}

/// Where target samples come from.
#[derive(Debug, Clone)]
pub enum TargetSource {
    /// Fresh draws every outer loop.
    Analytic(DensityModel),
    /// A fixed sample set, reused every outer loop.
    Empirical(ParticleEnsemble),
}

impl TargetSource {
    pub fn dim(&self) -> usize {
        match self {
            TargetSource::Analytic(p) => p.dim(),
            TargetSource::Empirical(s) => s.dim(),
        }
    }

    pub fn density(&self) -> Option<&DensityModel> {
        match self {
            TargetSource::Analytic(p) => Some(p),
            TargetSource::Empirical(_) => None,
        }
    }

    pub fn samples<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> ParticleEnsemble {
        match self {
            TargetSource::Analytic(p) => p.sample(rng, count),
            TargetSource::Empirical(s) => s.clone(),
        }
    }
}

pub fn sample_latents<R: Rng + ?Sized>(
    kind: LatentKind,
    dim: usize,
    count: usize,
    rng: &mut R,
) -> ParticleEnsemble {
    let data: Vec<f64> = match kind {
        LatentKind::Normal => (0..count * dim)
            .map(|_| StandardNormal.sample(rng))
            .collect(),
        LatentKind::Uniform => {
            let u = Uniform::new(-1.0, 1.0).expect("valid range");
            (0..count * dim).map(|_| u.sample(rng)).collect()
        }
    };
    if count == 0 {
        return ParticleEnsemble::empty(dim);
    }
    ParticleEnsemble::from_flat(dim, data).expect("finite latent draws")
}

pub fn generator_push(generator: &Mlp, latents: &ParticleEnsemble) -> Result<ParticleEnsemble> {
    if latents.dim() != generator.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "generator latent dimension",
            expected: generator.input_dim(),
            found: latents.dim(),
        });
    }
    if latents.is_empty() {
        return Ok(ParticleEnsemble::empty(generator.output_dim()));
    }
    let out = generator.forward(&latents.view())?;
    if let Some(row) = out
        .outer_iter()
        .position(|r| r.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFiniteOutput { row });
    }
    ParticleEnsemble::new(out)
}

/// Draws `count` latents of the given kind and pushes them through the generator.
pub fn sample_generator<R: Rng + ?Sized>(
    generator: &Mlp,
    latent: LatentKind,
    count: usize,
    rng: &mut R,
) -> Result<ParticleEnsemble> {
    let w = sample_latents(latent, generator.input_dim(), count, rng);
    generator_push(generator, &w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorFit {
    /// Full-batch mean squared distance before the first step.
    pub initial_mse: f64,
    pub final_mse: f64,
    pub steps: usize,
}

/// Mean over rows of `‖G(W_i) - Z_i‖²`.
pub fn pairing_mse(
    generator: &Mlp,
    latents: &ParticleEnsemble,
    targets: &ParticleEnsemble,
) -> Result<f64> {
    let out = generator.forward(&latents.view())?;
    let sq: f64 = (&out - targets.positions()).iter().map(|v| v * v).sum();
    Ok(sq / latents.len() as f64)
}

/// Least-squares refit of the generator to `(latents[i], targets[i])` pairs
/// with RMSProp on minibatches drawn with replacement.
pub fn fit_generator<R: Rng + ?Sized>(
    generator: &mut Mlp,
    latents: &ParticleEnsemble,
    targets: &ParticleEnsemble,
    spec: &GeneratorFitSpec,
    rng: &mut R,
) -> Result<GeneratorFit> {
    if latents.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            context: "generator fit pair count",
            expected: latents.len(),
            found: targets.len(),
        });
    }
    if latents.dim() != generator.input_dim() || targets.dim() != generator.output_dim() {
        return Err(Error::DimensionMismatch {
            context: "generator fit shapes",
            expected: generator.input_dim() + generator.output_dim(),
            found: latents.dim() + targets.dim(),
        });
    }
    if latents.is_empty() {
        return Err(Error::TooFewPoints {
            context: "fit_generator",
            required: 1,
            found: 0,
        });
    }
    if spec.batch_size == 0 {
        return Err(Error::invalid("generator_fit batch_size must be >= 1"));
    }
    spec.optimizer.validate()?;
    let initial_mse = pairing_mse(generator, latents, targets)?;
    let b = spec.batch_size;
    let mut w = Array2::zeros((b, latents.dim()));
    let mut z = Array2::zeros((b, targets.dim()));
    for _ in 0..spec.steps {
        for i in 0..b {
            let k = rng.random_range(0..latents.len());
            w.row_mut(i).assign(&ndarray::aview1(latents.point(k)));
            z.row_mut(i).assign(&ndarray::aview1(targets.point(k)));
        }
        let tape = generator.tape(&w.view())?;
        let upstream = (tape.output() - &z) * (2.0 / b as f64);
        let grad = generator.grad_params_tape(&tape, &upstream.view())?;
        generator.rmsprop_step(&grad, &spec.optimizer)?;
    }
    let final_mse = pairing_mse(generator, latents, targets)?;
    Ok(GeneratorFit {
        initial_mse,
        final_mse,
        steps: spec.steps,
    })
}

/// State handed to observers at the end of every outer loop.
pub struct OuterLoopReport<'a> {
    pub outer: usize,
    pub particles: &'a ParticleEnsemble,
    pub telemetry: &'a [TelemetryRecord],
    pub fit: GeneratorFit,
    pub generator: &'a Mlp,
    pub classifier: &'a Mlp,
    /// True when this loop falls on the snapshot schedule or is the last one.
    pub snapshot: bool,
}

/// Receives run artifacts as they are produced. Errors abort the run.
pub trait RunObserver {
    fn outer_loop_done(&mut self, report: &OuterLoopReport<'_>) -> Result<()>;
}

impl RunObserver for () {
    fn outer_loop_done(&mut self, _: &OuterLoopReport<'_>) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct VGrowOutcome {
    pub generator: Mlp,
    pub initial_generator: Mlp,
    pub classifier: Mlp,
    pub telemetry: FlowTelemetry,
    pub fits: Vec<GeneratorFit>,
}

/// Readies a learned estimator for outer loop `outer`. The input
/// normalisation (when enabled) is fit once on the first target batch; on
/// cold starts the network is rebuilt from `init_rng`. Exact estimators are
/// left alone.
pub fn prepare_classifier<R: Rng + ?Sized>(
    estimator: &mut RatioEstimator,
    net: &NetSpec,
    warm_start: bool,
    outer: usize,
    real: &ParticleEnsemble,
    norm: &mut Option<InputNorm>,
    init_rng: &mut R,
) -> Result<()> {
    let Some(classifier) = estimator.classifier_mut() else {
        return Ok(());
    };
    if outer == 0 && net.standardize_input {
        *norm = Some(InputNorm::fit(&real.view())?);
    }
    if outer > 0 && !warm_start {
        *classifier = net.build(real.dim(), 1, init_rng)?;
    }
    if outer == 0 || !warm_start {
        classifier.set_input_norm(norm.clone())?;
    }
    Ok(())
}

pub(crate) fn abort(outer: usize, e: Error) -> Error {
    let inner = match &e {
        Error::NonFiniteParticle { inner_loop, .. } => Some(*inner_loop),
        _ => None,
    };
    Error::Aborted {
        outer,
        inner,
        source: Box::new(e),
    }
}

/// The generator `vgrow_train` starts from, for a target of dimension `dim`.
pub fn initial_generator(config: &VGrowConfig, dim: usize) -> Result<Mlp> {
    config.generator_net.build(
        config.latent_dim,
        dim,
        &mut rng::stream(config.seed, streams::INIT_GENERATOR),
    )
}

/// Runs `config.outer_loops` iterations of
/// `{sample W; Z = G(W); move Z with the learned-ratio flow; refit G to (W, Z)}`.
pub fn vgrow_train(
    config: &VGrowConfig,
    target: &TargetSource,
    observer: &mut dyn RunObserver,
) -> Result<VGrowOutcome> {
    config.validate()?;
    let d = target.dim();
    let seed = config.seed;
    let mut generator = initial_generator(config, d)?;
    let initial_generator = generator.clone();
    let mut init_rng = rng::stream(seed, streams::INIT_CLASSIFIER);
    let classifier = config.classifier_net.build(d, 1, &mut init_rng)?;
    let mut estimator = RatioEstimator::learned(classifier)?
        .with_bounds(config.ratio_floor, config.ratio_ceiling)?;
    let mut latent_rng = rng::stream(seed, streams::LATENTS);
    let mut target_rng = rng::stream(seed, streams::TARGET);
    let mut classifier_rng = rng::stream(seed, streams::CLASSIFIER_BATCHES);
    let mut generator_rng = rng::stream(seed, streams::GENERATOR_BATCHES);
    let mut telemetry = FlowTelemetry::default();
    let mut fits = Vec::with_capacity(config.outer_loops);
    let mut norm: Option<InputNorm> = None;

    for outer in 0..config.outer_loops {
        let real = target.samples(&mut target_rng, config.particles_per_loop);
        prepare_classifier(
            &mut estimator,
            &config.classifier_net,
            config.classifier.warm_start,
            outer,
            &real,
            &mut norm,
            &mut init_rng,
        )
        .map_err(|e| abort(outer, e))?;
        let w = sample_latents(
            config.latent,
            config.latent_dim,
            config.particles_per_loop,
            &mut latent_rng,
        );
        let z = generator_push(&generator, &w).map_err(|e| abort(outer, e))?;
        let (moved, mut loop_telemetry) = inner_loop(
            &z,
            &real,
            &mut estimator,
            &config.classifier,
            &config.flow,
            &mut classifier_rng,
        )
        .map_err(|e| abort(outer, e))?;
        loop_telemetry.set_outer(outer);
        let fit = fit_generator(
            &mut generator,
            &w,
            &moved,
            &config.generator_fit,
            &mut generator_rng,
        )
        .map_err(|e| abort(outer, e))?;
        fits.push(fit);
        let report = OuterLoopReport {
            outer,
            particles: &moved,
            telemetry: &loop_telemetry.records,
            fit,
            generator: &generator,
            classifier: estimator.classifier().expect("learned estimator"),
            snapshot: (outer + 1) % config.snapshot_every == 0 || outer + 1 == config.outer_loops,
        };
        observer
            .outer_loop_done(&report)
            .map_err(|e| abort(outer, e))?;
        telemetry.records.extend(loop_telemetry.records);
    }
    let classifier = estimator.classifier().expect("learned estimator").clone();
    Ok(VGrowOutcome {
        generator,
        initial_generator,
        classifier,
        telemetry,
        fits,
    })
}
