//! TOML run configuration. Every table rejects unknown keys, and all values
//! are checked before any compute starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::density::DensityModel;
use crate::divergence::FDivergence;
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::generator::{GeneratorFitSpec, LatentKind, NetSpec, TargetSource, VGrowConfig};
use crate::io;
use crate::net::{Activation, RmsPropConfig};
use crate::ratio::{ClassifierTrainSpec, DEFAULT_RATIO_CEILING, DEFAULT_RATIO_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorMode {
    Exact,
    #[default]
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn default_modes() -> usize {
    8
}
fn default_radius() -> f64 {
    5.0
}
fn default_one() -> f64 {
    1.0
}
fn default_per_side() -> usize {
    5
}
fn default_spacing() -> f64 {
    2.0
}
fn default_lattice_var() -> f64 {
    0.25
}
fn default_curvature() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    Gaussian {
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    Mixture {
        components: Vec<ComponentSpec>,
    },
    Ring {
        #[serde(default = "default_modes")]
        modes: usize,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_one")]
        var: f64,
    },
    Lattice {
        #[serde(default = "default_per_side")]
        per_side: usize,
        #[serde(default = "default_spacing")]
        spacing: f64,
        #[serde(default = "default_lattice_var")]
        var: f64,
    },
    UniformBox {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Banana {
        #[serde(default = "default_one")]
        scale: f64,
        #[serde(default = "default_curvature")]
        curvature: f64,
    },
    /// Empirical sample file: CSV with a header row and one point per row.
    Samples {
        path: PathBuf,
    },
}

impl DistributionSpec {
    fn density(&self) -> Result<Option<DensityModel>> {
        Ok(Some(match self {
            Self::Gaussian { mean, var } => DensityModel::gaussian(mean.clone(), var.clone())?,
            Self::Mixture { components } => DensityModel::gaussian_mixture(
                components
                    .iter()
                    .map(|c| (c.weight, c.mean.clone(), c.var.clone()))
                    .collect(),
            )?,
            Self::Ring { modes, radius, var } => DensityModel::ring(*modes, *radius, *var)?,
            Self::Lattice {
                per_side,
                spacing,
                var,
            } => DensityModel::lattice(*per_side, *spacing, *var)?,
            Self::UniformBox { lo, hi } => DensityModel::uniform_box(lo.clone(), hi.clone())?,
            Self::Banana { scale, curvature } => DensityModel::banana(*scale, *curvature)?,
            Self::Samples { .. } => return Ok(None),
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSection {
    pub step_size: f64,
    pub inner_loops: usize,
    pub velocity_clip: Option<f64>,
    pub ratio_floor: f64,
    pub ratio_ceiling: f64,
}

impl Default for FlowSection {
    fn default() -> Self {
        Self {
            step_size: 0.5,
            inner_loops: 20,
            velocity_clip: None,
            ratio_floor: DEFAULT_RATIO_FLOOR,
            ratio_ceiling: DEFAULT_RATIO_CEILING,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSection {
    pub steps: usize,
    pub batch_size: usize,
    pub warm_start: bool,
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub standardize_input: bool,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let train = ClassifierTrainSpec::default();
        let net = NetSpec::default();
        Self {
            steps: train.steps,
            batch_size: train.batch_size,
            warm_start: train.warm_start,
            learning_rate: train.optimizer.learning_rate,
            decay: train.optimizer.decay,
            epsilon: train.optimizer.epsilon,
            hidden: net.hidden,
            activation: net.activation,
            standardize_input: net.standardize_input,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSection {
    pub latent_dim: usize,
    pub latent: LatentKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub output: Activation,
    pub fit_steps: usize,
    pub fit_batch_size: usize,
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let fit = GeneratorFitSpec::default();
        let net = NetSpec::default();
        Self {
            latent_dim: 2,
            latent: LatentKind::Normal,
            hidden: net.hidden,
            activation: net.activation,
            output: net.output,
            fit_steps: fit.steps,
            fit_batch_size: fit.batch_size,
            learning_rate: fit.optimizer.learning_rate,
            decay: fit.optimizer.decay,
            epsilon: fit.optimizer.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub outer_loops: usize,
    pub particles: usize,
    pub snapshot_every: usize,
    /// Generated and fresh target points in the final report.
    pub eval_samples: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            outer_loops: 30,
            particles: 2000,
            snapshot_every: 10,
            eval_samples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_divergence")]
    pub divergence: String,
    #[serde(default)]
    pub estimator: EstimatorMode,
    pub target: DistributionSpec,
    /// Starting distribution of the particles for `flow`; `N(0, I)` when
    /// absent.
    #[serde(default)]
    pub reference: Option<DistributionSpec>,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub generator: GeneratorSection,
    #[serde(default)]
    pub run: RunSection,
}

fn default_divergence() -> String {
    "KL".to_string()
}

fn config_err(key: &str, e: impl std::fmt::Display) -> Error {
    Error::Config {
        key: key.to_string(),
        message: e.to_string(),
    }
}

/// Pulls the offending key out of a serde message such as
/// "unknown field `stepsize`, expected ...".
fn offending_key(message: &str) -> String {
    message
        .split('`')
        .nth(1)
        .filter(|_| message.contains("field"))
        .unwrap_or("<document>")
        .to_string()
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config {
            key: offending_key(e.message()),
            message: e.to_string().trim_end().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative sample paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for spec in std::iter::once(&mut cfg.target).chain(cfg.reference.as_mut()) {
            if let DistributionSpec::Samples { path } = spec {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn divergence(&self) -> Result<FDivergence> {
        FDivergence::by_name(&self.divergence).map_err(|e| config_err("divergence", e))
    }

    pub fn flow_config(&self) -> Result<FlowConfig> {
        let cfg = FlowConfig {
            step_size: self.flow.step_size,
            inner_loops: self.flow.inner_loops,
            divergence: self.divergence()?,
            velocity_clip: self.flow.velocity_clip,
        };
        cfg.validate().map_err(|e| config_err("flow", e))?;
        Ok(cfg)
    }

    pub fn classifier_spec(&self) -> ClassifierTrainSpec {
        let c = &self.classifier;
        ClassifierTrainSpec {
            steps: c.steps,
            batch_size: c.batch_size,
            optimizer: RmsPropConfig {
                learning_rate: c.learning_rate,
                decay: c.decay,
                epsilon: c.epsilon,
            },
            warm_start: c.warm_start,
        }
    }

    pub fn classifier_net(&self) -> NetSpec {
        NetSpec {
            hidden: self.classifier.hidden.clone(),
            activation: self.classifier.activation,
            output: Activation::Identity,
            standardize_input: self.classifier.standardize_input,
        }
    }

    pub fn vgrow_config(&self) -> Result<VGrowConfig> {
        let g = &self.generator;
        let cfg = VGrowConfig {
            latent_dim: g.latent_dim,
            latent: g.latent,
            outer_loops: self.run.outer_loops,
            flow: self.flow_config()?,
            classifier: self.classifier_spec(),
            generator_fit: GeneratorFitSpec {
                steps: g.fit_steps,
                batch_size: g.fit_batch_size,
                optimizer: RmsPropConfig {
                    learning_rate: g.learning_rate,
                    decay: g.decay,
                    epsilon: g.epsilon,
                },
            },
            generator_net: NetSpec {
                hidden: g.hidden.clone(),
                activation: g.activation,
                output: g.output,
                standardize_input: false,
            },
            classifier_net: self.classifier_net(),
            particles_per_loop: self.run.particles,
            snapshot_every: self.run.snapshot_every,
            ratio_floor: self.flow.ratio_floor,
            ratio_ceiling: self.flow.ratio_ceiling,
            seed: self.seed,
        };
        cfg.validate().map_err(|e| config_err("run", e))?;
        Ok(cfg)
    }

    /// Analytic target density, or `None` for a sample file.
    pub fn target_density(&self) -> Result<Option<DensityModel>> {
        self.target.density().map_err(|e| config_err("target", e))
    }

    pub fn target_source(&self) -> Result<TargetSource> {
        match &self.target {
            DistributionSpec::Samples { path } => {
                Ok(TargetSource::Empirical(io::read_points(path)?))
            }
            _ => Ok(TargetSource::Analytic(
                self.target_density()?.expect("analytic target"),
            )),
        }
    }

    pub fn reference_density(&self, dim: usize) -> Result<DensityModel> {
        match &self.reference {
            None => DensityModel::standard_normal(dim).map_err(|e| config_err("reference", e)),
            Some(DistributionSpec::Samples { .. }) => Err(config_err(
                "reference.type",
                "the reference must be an analytic distribution",
            )),
            Some(spec) => {
                let d = spec
                    .density()
                    .map_err(|e| config_err("reference", e))?
                    .expect("analytic");
                if d.dim() != dim {
                    return Err(config_err(
                        "reference",
                        format!(
                            "dimension {} does not match target dimension {dim}",
                            d.dim()
                        ),
                    ));
                }
                Ok(d)
            }
        }
    }

    /// Checks everything that can be checked without touching the disk.
    pub fn validate(&self) -> Result<()> {
        self.divergence()?;
        let target = self.target_density()?;
        if let Some(t) = &target {
            self.reference_density(t.dim())?;
        } else if let Some(r) = &self.reference {
            r.density().map_err(|e| config_err("reference", e))?;
        }
        if self.estimator == EstimatorMode::Exact && target.is_none() {
            return Err(config_err(
                "estimator",
                "exact ratios need an analytic target",
            ));
        }
        if self.run.particles == 0 {
            return Err(config_err("run.particles", "must be >= 1"));
        }
        if self.run.eval_samples < 2 {
            return Err(config_err("run.eval_samples", "must be >= 2"));
        }
        self.vgrow_config()?;
        RmsPropConfig {
            learning_rate: self.classifier.learning_rate,
            decay: self.classifier.decay,
            epsilon: self.classifier.epsilon,
        }
        .validate()
        .map_err(|e| config_err("classifier", e))?;
        Ok(())
    }

    /// Particle ensemble used as the flow's target samples when the target
    /// is a sample file.
    pub fn empirical_target(&self) -> Result<Option<ParticleEnsemble>> {
        match &self.target {
            DistributionSpec::Samples { path } => io::read_points(path).map(Some),
            _ => Ok(None),
        }
    }
}
