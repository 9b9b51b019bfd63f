//! Subcommand configs and drivers behind the `scorefusion` binary.

use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::{AuxSpec, ExperimentConfig, TargetSpec, CONFIG_SCHEMA_VERSION};
use super::store::{load_field, save_field, StoredField};
use super::{resolve_out_dir, run_experiment, write_report};
use crate::error::{check_dim, Error, Result};
use crate::field::FieldHandle;
use crate::fusion::{fit_score_fusion, sgd_train, FusionTrainConfig};
use crate::metrics::{histogram, wasserstein1_1d};
use crate::mixture::GaussianMixture;
use crate::net::{dsm_train, DsmConfig, MlpScoreNet, NetArch};
use crate::ou::AnalyticScore;
use crate::rng;
use crate::sampler::{fused_score, reverse_sample, Integrator, ReverseConfig};
use crate::samples::SampleSet;
use crate::schedule::OuSchedule;
use crate::simplex::SimplexWeights;
use crate::vanilla::{covering_grid, run_vanilla_fusion};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    TrainAux,
    FuseScore,
    FuseVanilla,
    TrainBaseline,
    Sample,
    Evaluate,
    Experiment,
}

/// Failure class, mapped to the process exit code.
#[derive(Debug)]
pub enum CommandError {
    /// Unreadable or invalid configuration (exit code 2).
    Config(Error),
    /// The run itself failed (exit code 1).
    Run(Error),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Run(_) => 1,
        }
    }
}

impl std::fmt::Display for CommandError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(e) => write!(f, "configuration error: {e}"),
            Self::Run(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub written: Vec<PathBuf>,
    /// Some experiment cells failed.
    pub partial: bool,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        i32::from(self.partial)
    }
}

/// Training data: a CSV file of samples, or fresh draws from a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Csv { path: PathBuf },
    Target { target: TargetSpec, n: usize },
}

impl DataSource {
    fn load(&self, base: &Path, seed: u64) -> Result<SampleSet> {
        match self {
            Self::Csv { path } => SampleSet::read_csv(&std::fs::read_to_string(base.join(path))?, path.display().to_string()),
            Self::Target { target, n } => target.sampler()?.sample(*n, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxKind {
    /// Exact mixture score.
    #[default]
    Analytic,
    /// MLP trained on draws from the mixture.
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainAuxConfig {
    pub schema_version: u32,
    pub mixture: GaussianMixture,
    #[serde(default)]
    pub schedule: OuSchedule,
    #[serde(default)]
    pub kind: AuxKind,
    #[serde(default = "default_aux_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub training: Option<DsmConfig>,
}

fn default_aux_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionSolver {
    #[default]
    ClosedForm,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseScoreConfig {
    pub schema_version: u32,
    pub auxiliaries: Vec<AuxSpec>,
    pub data: DataSource,
    #[serde(default)]
    pub schedule: OuSchedule,
    #[serde(default)]
    pub fusion: Option<FusionTrainConfig>,
    #[serde(default)]
    pub solver: FusionSolver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseVanillaConfig {
    pub schema_version: u32,
    pub references: Vec<GaussianMixture>,
    pub data: DataSource,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_tau_max")]
    pub tau_max: usize,
}

fn default_grid_points() -> usize {
    2001
}

fn default_tau_max() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainBaselineConfig {
    pub schema_version: u32,
    pub data: DataSource,
    #[serde(default)]
    pub schedule: OuSchedule,
    #[serde(default)]
    pub training: Option<DsmConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub schema_version: u32,
    pub fields: Vec<AuxSpec>,
    /// Fusion weights; uniform when absent.
    #[serde(default)]
    pub weights: Option<SimplexWeights>,
    #[serde(default)]
    pub schedule: OuSchedule,
    #[serde(default)]
    pub integrator: Integrator,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateConfig {
    pub schema_version: u32,
    pub samples: PathBuf,
    pub reference: DataSource,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_bins() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub w1: f64,
    pub n_samples: usize,
    pub n_reference: usize,
}

fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    let probe: serde_json::Value = serde_json::from_str(text)?;
    let found = probe.get("schema_version").and_then(|v| v.as_u64()).ok_or_else(|| Error::Schema("missing schema_version".into()))?;
    if found != CONFIG_SCHEMA_VERSION as u64 {
        return Err(Error::SchemaVersion { found: found as u32, expected: CONFIG_SCHEMA_VERSION });
    }
    Ok(serde_json::from_value(probe)?)
}

fn fields_from(specs: &[AuxSpec], schedule: &OuSchedule, base: &Path) -> Result<Vec<FieldHandle>> {
    let fields: Vec<FieldHandle> = specs
        .iter()
        .map(|a| match a {
            AuxSpec::Mixture { mixture } => Ok(std::sync::Arc::new(AnalyticScore::new(mixture.clone(), *schedule)) as FieldHandle),
            AuxSpec::Checkpoint { path } => Ok(load_field(&base.join(path), None)?.handle()),
        })
        .collect::<Result<_>>()?;
    let first = fields.first().ok_or_else(|| Error::Schema("no score fields given".into()))?;
    for f in &fields {
        check_dim(first.dim(), f.dim())?;
    }
    Ok(fields)
}

struct Writer {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir, written: Vec::new() })
    }

    fn text(&mut self, name: &str, content: &str) -> Result<()> {
        let p = self.dir.join(name);
        std::fs::write(&p, content)?;
        self.written.push(p);
        Ok(())
    }

    fn file(&mut self, name: &str) -> Result<BufWriter<std::fs::File>> {
        let p = self.dir.join(name);
        let f = std::fs::File::create(&p)?;
        self.written.push(p);
        Ok(BufWriter::new(f))
    }

    fn done(self, partial: bool) -> Outcome {
        Outcome { out_dir: self.dir, written: self.written, partial }
    }
}

/// Runs one subcommand. `seed` defaults to 0; for `experiment` it replaces
/// the configured seed list.
pub fn run_command(cmd: Command, config: &Path, seed: Option<u64>, out: Option<&Path>) -> std::result::Result<Outcome, CommandError> {
    let text = std::fs::read_to_string(config).map_err(|e| CommandError::Config(e.into()))?;
    let base = config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let s = seed.unwrap_or(0);
    let cfg_err = CommandError::Config;
    let run_err = CommandError::Run;

    match cmd {
        Command::Experiment => {
            let mut cfg = ExperimentConfig::from_json(&text).map_err(cfg_err)?;
            if let Some(seed) = seed {
                cfg.seeds = vec![seed];
            }
            let out_dir = resolve_out_dir(out, cfg.out_dir.as_deref());
            // Cell failures land in the report; anything that stops the run
            // before the first cell is a configuration problem.
            let report = run_experiment(&cfg, &base).map_err(cfg_err)?;
            write_report(&report, &out_dir).map_err(run_err)?;
            let written = std::fs::read_dir(&out_dir).map_err(|e| run_err(e.into()))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
            Ok(Outcome { out_dir, written, partial: report.partial })
        }
        Command::TrainAux => {
            let cfg: TrainAuxConfig = parse(&text).map_err(cfg_err)?;
            let mut w = Writer::new(resolve_out_dir(out, None)).map_err(run_err)?;
            let field = match cfg.kind {
                AuxKind::Analytic => StoredField::AnalyticMixture { mixture: cfg.mixture, schedule: cfg.schedule },
                AuxKind::Mlp => {
                    let data = cfg.mixture.sample(cfg.n_samples, &mut rng::stream(rng::derive_seed(s, 1))).map_err(cfg_err)?;
                    let training = DsmConfig { seed: rng::derive_seed(s, 2), ..cfg.training.unwrap_or_else(|| DsmConfig::for_schedule(&cfg.schedule)) };
                    let net = MlpScoreNet::init(NetArch::default_for(cfg.mixture.dim()), rng::derive_seed(s, 3)).map_err(run_err)?;
                    let fit = dsm_train(net, &data, &cfg.schedule, &training).map_err(run_err)?;
                    StoredField::Mlp { network: fit.net }
                }
            };
            let p = w.dir.join("aux.json");
            save_field(&p, &field).map_err(run_err)?;
            w.written.push(p);
            Ok(w.done(false))
        }
        Command::FuseScore => {
            let cfg: FuseScoreConfig = parse(&text).map_err(cfg_err)?;
            let fields = fields_from(&cfg.auxiliaries, &cfg.schedule, &base).map_err(cfg_err)?;
            let data = cfg.data.load(&base, rng::derive_seed(s, 1)).map_err(cfg_err)?;
            let fusion = FusionTrainConfig { seed: s, ..cfg.fusion.unwrap_or_else(|| FusionTrainConfig::for_schedule(&cfg.schedule)) };
            fusion.validate(&cfg.schedule).map_err(cfg_err)?;
            let mut w = Writer::new(resolve_out_dir(out, None)).map_err(run_err)?;
            let json = match cfg.solver {
                FusionSolver::ClosedForm => serde_json::to_string_pretty(&fit_score_fusion(&fields, &data, &cfg.schedule, &fusion).map_err(run_err)?),
                FusionSolver::Sgd => serde_json::to_string_pretty(&sgd_train(&fields, &data, &cfg.schedule, &fusion).map_err(run_err)?),
            }
            .map_err(|e| run_err(e.into()))?;
            w.text("fusion.json", &json).map_err(run_err)?;
            Ok(w.done(false))
        }
        Command::FuseVanilla => {
            let cfg: FuseVanillaConfig = parse(&text).map_err(cfg_err)?;
            let data = cfg.data.load(&base, rng::derive_seed(s, 1)).map_err(cfg_err)?;
            let g = covering_grid(&cfg.references, cfg.grid_points).map_err(cfg_err)?;
            let fit = run_vanilla_fusion(&data, &cfg.references, &g, cfg.tau_max).map_err(run_err)?;
            let mut w = Writer::new(resolve_out_dir(out, None)).map_err(run_err)?;
            let summary = serde_json::json!({
                "weights": fit.weights,
                "objective": fit.trace.objective.last(),
                "iterations": cfg.tau_max,
            });
            w.text("vanilla.json", &serde_json::to_string_pretty(&summary).map_err(|e| run_err(e.into()))?).map_err(run_err)?;
            let f = w.file("fw_trace.csv").map_err(run_err)?;
            fit.trace.write_csv(f).map_err(run_err)?;
            Ok(w.done(false))
        }
        Command::TrainBaseline => {
            let cfg: TrainBaselineConfig = parse(&text).map_err(cfg_err)?;
            let data = cfg.data.load(&base, rng::derive_seed(s, 1)).map_err(cfg_err)?;
            let training = DsmConfig { seed: rng::derive_seed(s, 2), ..cfg.training.unwrap_or_else(|| DsmConfig::for_schedule(&cfg.schedule)) };
            let net = MlpScoreNet::init(NetArch::default_for(data.dim()), rng::derive_seed(s, 3)).map_err(run_err)?;
            let fit = dsm_train(net, &data, &cfg.schedule, &training).map_err(run_err)?;
            let mut w = Writer::new(resolve_out_dir(out, None)).map_err(run_err)?;
            let p = w.dir.join("baseline.json");
            save_field(&p, &StoredField::Mlp { network: fit.net }).map_err(run_err)?;
            w.written.push(p);
            let mut curve = String::from("epoch,train_loss,val_loss\n");
            for (e, l) in fit.train_curve.iter().enumerate() {
                let v = fit.val_curve.get(e).map(|v| format!("{v:?}")).unwrap_or_default();
                curve.push_str(&format!("{e},{l:?},{v}\n"));
            }
            w.text("loss_curve.csv", &curve).map_err(run_err)?;
            Ok(w.done(false))
        }
        Command::Sample => {
            let cfg: SampleConfig = parse(&text).map_err(cfg_err)?;
            let fields = fields_from(&cfg.fields, &cfg.schedule, &base).map_err(cfg_err)?;
            let weights = match cfg.weights {
                Some(w) => w,
                None => SimplexWeights::uniform(fields.len()).map_err(cfg_err)?,
            };
            let fused = fused_score(fields, weights).map_err(cfg_err)?;
            let samples = reverse_sample(&fused, &ReverseConfig::new(cfg.schedule, cfg.n_samples, s).with_integrator(cfg.integrator)).map_err(run_err)?;
            let mut w = Writer::new(resolve_out_dir(out, None)).map_err(run_err)?;
            samples.write_csv(w.file("samples.csv").map_err(run_err)?).map_err(run_err)?;
            Ok(w.done(false))
        }
        Command::Evaluate => {
            let cfg: EvaluateConfig = parse(&text).map_err(cfg_err)?;
            let samples = DataSource::Csv { path: cfg.samples.clone() }.load(&base, 0).map_err(cfg_err)?;
            let reference = cfg.reference.load(&base, rng::derive_seed(s, 1)).map_err(cfg_err)?;
            let w1 = wasserstein1_1d(&samples, &reference).map_err(run_err)?;
            let eval = Evaluation { w1, n_samples: samples.len(), n_reference: reference.len() };
            let mut w = Writer::new(resolve_out_dir(out, None)).map_err(run_err)?;
            w.text("metrics.json", &serde_json::to_string_pretty(&eval).map_err(|e| run_err(e.into()))?).map_err(run_err)?;
            let v = samples.values_1d().map_err(run_err)?;
            let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
            let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
            histogram(&samples, cfg.bins, (lo, hi)).map_err(run_err)?.write_csv(w.file("hist.csv").map_err(run_err)?).map_err(run_err)?;
            Ok(w.done(false))
        }
    }
}
