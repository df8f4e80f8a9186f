//! Command-line front end: `flow`, `train`, `verify <suite>` and `eval`.
//!
//! Every command that writes to an output directory writes `manifest.json`
//! there before anything else.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{DistributionSpec, EstimatorMode, RunConfig};
use crate::density::DensityModel;
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::flow::{inner_loop, Bandwidth};
use crate::generator::{
    abort, initial_generator, prepare_classifier, sample_generator, vgrow_train, OuterLoopReport,
    RunObserver, TargetSource,
};
use crate::io::{self, SnapshotWriter, TelemetryWriter};
use crate::metrics::{energy_noise_floor, mode_coverage, two_sample_report, TwoSampleReport};
use crate::ratio::RatioEstimator;
use crate::rng::{self, streams, VRng};
use crate::suites::Suite;

/// Replicates used for the energy-distance noise floor in reports.
pub const NOISE_FLOOR_REPLICATES: usize = 100;

#[derive(Debug, Parser)]
#[command(
    name = "vgrow",
    version,
    about = "Variational gradient flows on particle ensembles"
)]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory. Overrides `out` in the config.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed. Overrides `seed` in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for pairwise statistics.
    #[arg(long, global = true, env = "VGROW_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Move particles from the reference toward the target (no generator).
    Flow,
    /// Flow phases with generator refits after each one.
    Train,
    /// Run a verification suite and report every assertion.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
    },
    /// Energy distance and MMD between two point files.
    Eval { a: PathBuf, b: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Flow => "flow",
            Command::Train => "train",
            Command::Verify { .. } => "verify",
            Command::Eval { .. } => "eval",
        }
    }
}

#[derive(Debug, Serialize)]
struct InputRecord {
    role: &'static str,
    path: PathBuf,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    seed: Option<u64>,
    threads: Option<usize>,
    inputs: Vec<InputRecord>,
    /// Effective configuration after command-line overrides.
    config: Option<String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn input(role: &'static str, path: &Path) -> Result<InputRecord> {
    Ok(InputRecord {
        role,
        path: path.to_path_buf(),
        sha256: sha256_file(path)?,
    })
}

/// Creates `dir` and writes its manifest.
fn start_run(dir: &Path, manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(Error::Config {
            key: "--threads".into(),
            message: "must be >= 1".into(),
        });
    }
    // A global pool built earlier in the same process is kept.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// Runs one command. `Ok(false)` means a verification assertion failed.
pub fn run(cli: &Cli) -> Result<bool> {
    configure_threads(cli.threads)?;
    match &cli.command {
        Command::Flow | Command::Train => {
            let job = Job::load(cli)?;
            match cli.command {
                Command::Flow => cmd_flow(&job).map(|_| true),
                _ => cmd_train(&job).map(|_| true),
            }
        }
        Command::Verify { suite } => cmd_verify(cli, *suite),
        Command::Eval { a, b } => cmd_eval(cli, a, b).map(|_| true),
    }
}

/// A validated config with overrides applied and inputs loaded.
struct Job {
    cfg: RunConfig,
    out: PathBuf,
    target: TargetSource,
    manifest: Manifest,
}

impl Job {
    fn load(cli: &Cli) -> Result<Self> {
        let path = cli.config.as_deref().ok_or_else(|| Error::Config {
            key: "--config".into(),
            message: format!("`{}` needs a config file", cli.command.name()),
        })?;
        let mut cfg = RunConfig::load(path)?;
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
        let out = cli
            .out
            .clone()
            .or_else(|| cfg.out.clone())
            .unwrap_or_else(|| PathBuf::from("runs").join(path.file_stem().unwrap_or_default()));
        let target = cfg.target_source()?;
        let mut inputs = vec![input("config", path)?];
        if let DistributionSpec::Samples { path } = &cfg.target {
            inputs.push(input("target", path)?);
        }
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: cli.command.name().to_string(),
            seed: Some(cfg.seed),
            threads: cli.threads,
            inputs,
            config: Some(cfg.to_toml_string()),
        };
        Ok(Self {
            cfg,
            out,
            target,
            manifest,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn stream(&self, id: u64) -> VRng {
        rng::stream(self.cfg.seed, id)
    }
}

fn cmd_flow(job: &Job) -> Result<()> {
    let cfg = &job.cfg;
    let d = job.target.dim();
    let reference = cfg.reference_density(d)?;
    let flow = cfg.flow_config()?;
    let outer_loops = cfg.run.outer_loops;
    let mut init_rng = job.stream(streams::INIT_CLASSIFIER);
    let mut estimator = match cfg.estimator {
        EstimatorMode::Exact => {
            if outer_loops * flow.inner_loops > 1 {
                return Err(Error::Config {
                    key: "estimator".into(),
                    message: "exact ratios are known only for the reference itself; \
                              use outer_loops * inner_loops <= 1 or the learned estimator"
                        .into(),
                });
            }
            let p = job
                .target
                .density()
                .expect("validated analytic target")
                .clone();
            RatioEstimator::exact(reference.clone(), p)?
        }
        EstimatorMode::Learned => {
            let net = cfg.classifier_net();
            RatioEstimator::learned(net.build(d, 1, &mut init_rng)?)?
        }
    }
    .with_bounds(cfg.flow.ratio_floor, cfg.flow.ratio_ceiling)?;

    start_run(&job.out, &job.manifest)?;
    let mut telemetry = TelemetryWriter::create(&job.path("telemetry.csv"))?;
    let mut snapshots = SnapshotWriter::create(&job.path("snapshots.csv"), d)?;
    let mut particles = reference.sample(
        &mut job.stream(streams::INITIAL_PARTICLES),
        cfg.run.particles,
    );
    let mut target_rng = job.stream(streams::TARGET);
    let mut batch_rng = job.stream(streams::CLASSIFIER_BATCHES);
    let net = cfg.classifier_net();
    let spec = cfg.classifier_spec();
    let mut norm = None;
    for outer in 0..outer_loops {
        let real = job.target.samples(&mut target_rng, cfg.run.particles);
        prepare_classifier(
            &mut estimator,
            &net,
            spec.warm_start,
            outer,
            &real,
            &mut norm,
            &mut init_rng,
        )
        .map_err(|e| abort(outer, e))?;
        let (moved, mut records) = inner_loop(
            &particles,
            &real,
            &mut estimator,
            &spec,
            &flow,
            &mut batch_rng,
        )
        .map_err(|e| abort(outer, e))?;
        records.set_outer(outer);
        telemetry.write(&records.records)?;
        particles = moved;
        if (outer + 1) % cfg.run.snapshot_every == 0 || outer + 1 == outer_loops {
            snapshots.write(outer, &particles)?;
        }
    }
    io::write_points(&job.path("particles_final.csv"), &particles)?;
    let evaluator = Evaluator::new(job)?;
    let report = evaluator.final_report(&particles, &mut job.stream(streams::EVALUATION))?;
    report.write(&job.path("report.csv"))?;
    report.print();
    Ok(())
}

/// Compares samples against the target for snapshot metrics and the final
/// report.
struct Evaluator {
    density: Option<DensityModel>,
    empirical: Option<ParticleEnsemble>,
    samples: usize,
}

impl Evaluator {
    fn new(job: &Job) -> Result<Self> {
        Ok(Self {
            density: job.target.density().cloned(),
            empirical: match &job.target {
                TargetSource::Empirical(e) => Some(e.clone()),
                TargetSource::Analytic(_) => None,
            },
            samples: job.cfg.run.eval_samples,
        })
    }

    fn target_samples(&self, rng: &mut VRng) -> ParticleEnsemble {
        match (&self.density, &self.empirical) {
            (Some(d), _) => d.sample(rng, self.samples),
            (None, Some(e)) => e.clone(),
            (None, None) => unreachable!("target is analytic or empirical"),
        }
    }

    fn compare(&self, samples: &ParticleEnsemble, rng: &mut VRng) -> Result<TwoSampleReport> {
        let target = self.target_samples(rng);
        two_sample_report(samples, &target, Bandwidth::Median, rng)
    }

    fn final_report(&self, samples: &ParticleEnsemble, rng: &mut VRng) -> Result<FinalReport> {
        let metrics = self.compare(samples, rng)?;
        let noise_floor = match &self.density {
            Some(d) => {
                Some(energy_noise_floor(d, self.samples, NOISE_FLOOR_REPLICATES, rng)?.mean_abs)
            }
            None => None,
        };
        let centers = self
            .density
            .as_ref()
            .map(|d| d.mode_centers())
            .unwrap_or_default();
        let coverage = if centers.is_empty() {
            Vec::new()
        } else {
            mode_coverage(samples, &centers)?
        };
        Ok(FinalReport {
            metrics,
            noise_floor,
            coverage,
        })
    }
}

struct FinalReport {
    metrics: TwoSampleReport,
    noise_floor: Option<f64>,
    coverage: Vec<f64>,
}

impl FinalReport {
    fn write(&self, path: &Path) -> Result<()> {
        let mut header: Vec<String> = [
            "n_samples",
            "n_target",
            "energy_distance",
            "mmd_rbf",
            "bandwidth",
            "noise_floor",
            "min_mode_fraction",
        ]
        .map(String::from)
        .to_vec();
        header.extend((0..self.coverage.len()).map(|k| format!("mode_{k}")));
        let m = &self.metrics;
        let mut row = vec![
            m.sample_sizes.0.to_string(),
            m.sample_sizes.1.to_string(),
            m.energy_distance.to_string(),
            m.mmd_rbf.to_string(),
            m.bandwidth.to_string(),
            self.noise_floor.map(|v| v.to_string()).unwrap_or_default(),
            self.min_mode_fraction()
                .map(|v| v.to_string())
                .unwrap_or_default(),
        ];
        row.extend(self.coverage.iter().map(|c| c.to_string()));
        io::write_table(path, &header, &[row])
    }

    fn min_mode_fraction(&self) -> Option<f64> {
        self.coverage.iter().copied().reduce(f64::min)
    }

    fn print(&self) {
        let m = &self.metrics;
        println!("energy_distance {:.6e}", m.energy_distance);
        println!("mmd_rbf {:.6e}", m.mmd_rbf);
        if let Some(f) = self.noise_floor {
            println!("noise_floor {f:.6e}");
        }
        if let Some(c) = self.min_mode_fraction() {
            println!("min_mode_fraction {c:.4}");
        }
    }
}

struct TrainObserver<'a> {
    job: &'a Job,
    telemetry: TelemetryWriter,
    snapshots: SnapshotWriter,
    metrics: csv::Writer<fs::File>,
    evaluator: Evaluator,
    eval_rng: VRng,
}

impl RunObserver for TrainObserver<'_> {
    fn outer_loop_done(&mut self, report: &OuterLoopReport<'_>) -> Result<()> {
        self.telemetry.write(report.telemetry)?;
        if !report.snapshot {
            return Ok(());
        }
        self.snapshots.write(report.outer, report.particles)?;
        let ckpt = self.job.path("checkpoints");
        report
            .generator
            .save(&ckpt.join(format!("generator_{:04}.bin", report.outer)))?;
        report
            .classifier
            .save(&ckpt.join(format!("classifier_{:04}.bin", report.outer)))?;
        let samples = sample_generator(
            report.generator,
            self.job.cfg.generator.latent,
            self.evaluator.samples,
            &mut self.eval_rng,
        )?;
        let m = self.evaluator.compare(&samples, &mut self.eval_rng)?;
        self.metrics.write_record([
            report.outer.to_string(),
            m.energy_distance.to_string(),
            m.mmd_rbf.to_string(),
            m.bandwidth.to_string(),
            report.fit.final_mse.to_string(),
        ])?;
        self.metrics.flush().map_err(|e| Error::io("metrics", e))
    }
}

fn cmd_train(job: &Job) -> Result<()> {
    let cfg = &job.cfg;
    if cfg.estimator == EstimatorMode::Exact {
        return Err(Error::Config {
            key: "estimator".into(),
            message: "`train` needs the learned estimator".into(),
        });
    }
    let vcfg = cfg.vgrow_config()?;
    let d = job.target.dim();
    start_run(&job.out, &job.manifest)?;
    let ckpt = job.path("checkpoints");
    fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
    initial_generator(&vcfg, d)?.save(&ckpt.join("generator_init.bin"))?;
    let metrics_path = job.path("metrics.csv");
    let mut metrics = csv::Writer::from_path(&metrics_path)?;
    metrics.write_record(["loop", "energy_distance", "mmd_rbf", "bandwidth", "fit_mse"])?;
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
    let mut observer = TrainObserver {
        job,
        telemetry: TelemetryWriter::create(&job.path("telemetry.csv"))?,
        snapshots: SnapshotWriter::create(&job.path("snapshots.csv"), d)?,
        metrics,
        evaluator: Evaluator::new(job)?,
        eval_rng: job.stream(streams::EVALUATION),
    };
    let outcome = vgrow_train(&vcfg, &job.target, &mut observer)?;
    outcome.generator.save(&ckpt.join("generator_final.bin"))?;
    outcome
        .classifier
        .save(&ckpt.join("classifier_final.bin"))?;
    let mut eval_rng = observer.eval_rng;
    let samples = sample_generator(
        &outcome.generator,
        cfg.generator.latent,
        cfg.run.eval_samples,
        &mut eval_rng,
    )?;
    io::write_points(&job.path("samples_final.csv"), &samples)?;
    let report = observer.evaluator.final_report(&samples, &mut eval_rng)?;
    report.write(&job.path("report.csv"))?;
    report.print();
    Ok(())
}

fn simple_manifest(cli: &Cli, inputs: Vec<InputRecord>) -> Manifest {
    Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: cli.command.name().to_string(),
        seed: cli.seed,
        threads: cli.threads,
        inputs,
        config: None,
    }
}

fn cmd_verify(cli: &Cli, suite: Suite) -> Result<bool> {
    if let Some(out) = &cli.out {
        start_run(out, &simple_manifest(cli, Vec::new()))?;
    }
    let checks = suite.run(cli.seed.unwrap_or(0))?;
    for c in &checks {
        println!("{}: {c}", suite.name());
    }
    let passed = checks.iter().all(|c| c.passed);
    println!(
        "{}: {}/{} assertions passed",
        suite.name(),
        checks.iter().filter(|c| c.passed).count(),
        checks.len()
    );
    if let Some(out) = &cli.out {
        let rows: Vec<Vec<String>> = checks
            .iter()
            .map(|c| {
                vec![
                    suite.name().to_string(),
                    c.name.clone(),
                    c.measured.to_string(),
                    serde_json::to_value(c.relation)
                        .ok()
                        .and_then(|v| v.as_str().map(String::from))
                        .unwrap_or_default(),
                    c.tolerance.to_string(),
                    c.passed.to_string(),
                ]
            })
            .collect();
        let header = [
            "suite",
            "check",
            "measured",
            "relation",
            "tolerance",
            "passed",
        ]
        .map(String::from);
        io::write_table(&out.join("verify.csv"), &header, &rows)?;
    }
    Ok(passed)
}

fn cmd_eval(cli: &Cli, a_path: &Path, b_path: &Path) -> Result<()> {
    let a = io::read_points(a_path)?;
    let b = io::read_points(b_path)?;
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "{} has dimension {} but {} has dimension {}",
            a_path.display(),
            a.dim(),
            b_path.display(),
            b.dim()
        )));
    }
    if let Some(out) = &cli.out {
        start_run(
            out,
            &simple_manifest(cli, vec![input("a", a_path)?, input("b", b_path)?]),
        )?;
    }
    let mut r = rng::stream(cli.seed.unwrap_or(0), streams::EVALUATION);
    let report = two_sample_report(&a, &b, Bandwidth::Median, &mut r)?;
    println!("energy_distance {:.6e}", report.energy_distance);
    println!("mmd_rbf {:.6e}", report.mmd_rbf);
    println!("bandwidth {:.6e}", report.bandwidth);
    println!(
        "sample_sizes {} {}",
        report.sample_sizes.0, report.sample_sizes.1
    );
    if let Some(out) = &cli.out {
        let header = [
            "n_a",
            "n_b",
            "energy_distance",
            "mmd_rbf",
            "bandwidth",
            "subsampled",
        ]
        .map(String::from);
        let row = vec![
            report.sample_sizes.0.to_string(),
            report.sample_sizes.1.to_string(),
            report.energy_distance.to_string(),
            report.mmd_rbf.to_string(),
            report.bandwidth.to_string(),
            report.subsampled.to_string(),
        ];
        io::write_table(&out.join("eval.csv"), &header, &[row])?;
    }
    Ok(())
}
