//! Config-driven low-data comparison: for every training-set size and seed,
//! learn each enabled method on `n` target draws, generate from it and score
//! the result by 1-D Wasserstein-1 against fresh ground-truth draws.

mod commands;
mod config;
mod store;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use commands::{
    run_command, AuxKind, Command, CommandError, DataSource, EvaluateConfig, Evaluation, FuseScoreConfig, FuseVanillaConfig, FusionSolver,
    Outcome, SampleConfig, TrainAuxConfig, TrainBaselineConfig,
};
pub use config::{AuxSpec, ExperimentConfig, Method, TargetSampler, TargetSpec, VanillaConfig, CONFIG_SCHEMA_VERSION, TRUTH_GRID_POINTS};
pub use store::{load_field, save_field, StoredField, FIELD_SCHEMA_VERSION};

use crate::error::{Error, Result};
use crate::field::FieldHandle;
use crate::fusion::fit_score_fusion;
use crate::metrics::{histogram, wasserstein1_sorted, Histogram};
use crate::mixture::GaussianMixture;
use crate::net::{dsm_train, MlpScoreNet, NetArch};
use crate::ou::AnalyticScore;
use crate::rng;
use crate::sampler::{fused_score, reverse_sample, ReverseConfig};
use crate::samples::SampleSet;
use crate::simplex::SimplexWeights;
use crate::vanilla::{covering_grid, run_vanilla_fusion};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "SCOREFUSION_OUT_DIR";

/// Resolves the output directory: explicit argument, then the environment
/// override, then the config, then `./out`.
pub fn resolve_out_dir(explicit: Option<&Path>, configured: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    configured.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("out"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub method: Method,
    pub size: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<SimplexWeights>,
    /// W1 against each of the repeated ground-truth draws.
    pub w1: Vec<f64>,
    pub w1_mean: Option<f64>,
    /// Standard error of `w1_mean` over the repeats.
    pub w1_se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_clock_s: f64,
    #[serde(skip)]
    pub histogram: Option<Histogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub crate_version: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
}

impl Environment {
    pub fn current() -> Self {
        Self {
            crate_version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            threads: rayon::current_num_threads(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub cells: Vec<CellReport>,
    /// Some cell failed; its error is recorded in place.
    pub partial: bool,
    pub environment: Environment,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: serde_json::Value = serde_json::from_str(text)?;
        let found = probe.get("schema_version").and_then(|v| v.as_u64()).ok_or_else(|| Error::Schema("missing schema_version".into()))?;
        if found != REPORT_SCHEMA_VERSION as u64 {
            return Err(Error::SchemaVersion { found: found as u32, expected: REPORT_SCHEMA_VERSION });
        }
        Ok(serde_json::from_value(probe)?)
    }

    /// The report without wall-clock times and environment, i.e. the part
    /// that is reproducible from config and seeds.
    pub fn payload(&self) -> Result<String> {
        let mut r = self.clone();
        r.cells.iter_mut().for_each(|c| c.wall_clock_s = 0.0);
        r.environment = Environment { crate_version: String::new(), os: String::new(), arch: String::new(), threads: 0 };
        r.to_json()
    }

    pub fn cells_for(&self, method: Method, size: usize) -> impl Iterator<Item = &CellReport> {
        self.cells.iter().filter(move |c| c.method == method && c.size == size)
    }

    /// Median of `w1_mean` over seeds; `None` when any cell failed.
    pub fn median_w1(&self, method: Method, size: usize) -> Option<f64> {
        let mut v: Vec<f64> = self.cells_for(method, size).map(|c| c.w1_mean).collect::<Option<_>>()?;
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
    }
}

/// Shared, read-only inputs of every cell.
struct Context<'a> {
    cfg: &'a ExperimentConfig,
    aux: Vec<FieldHandle>,
    aux_mixtures: Vec<GaussianMixture>,
    truth: TargetSampler,
}

fn resolve_aux(cfg: &ExperimentConfig, base: &Path) -> Result<(Vec<FieldHandle>, Vec<GaussianMixture>)> {
    let mut fields = Vec::new();
    let mut mixtures = Vec::new();
    for a in &cfg.auxiliaries {
        match a {
            AuxSpec::Mixture { mixture } => {
                fields.push(std::sync::Arc::new(AnalyticScore::new(mixture.clone(), cfg.schedule)) as FieldHandle);
                mixtures.push(mixture.clone());
            }
            AuxSpec::Checkpoint { path } => fields.push(load_field(&base.join(path), Some(cfg.dim))?.handle()),
        }
    }
    Ok((fields, mixtures))
}

fn data_seed(seed: u64, size: usize) -> u64 {
    rng::derive_seed(seed, size as u64)
}

fn truth_seed(seed: u64, size: usize, repeat: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(data_seed(seed, size), 0x7275), repeat as u64)
}

fn method_seed(seed: u64, size: usize, method: Method) -> u64 {
    rng::derive_seed(data_seed(seed, size), method.code())
}

impl Context<'_> {
    /// Learns the method on `data` and generates `eval_samples` draws.
    fn generate(&self, method: Method, data: &SampleSet, seed: u64) -> Result<(Option<SimplexWeights>, SampleSet)> {
        let cfg = self.cfg;
        let reverse = ReverseConfig::new(cfg.schedule, cfg.eval_samples, rng::derive_seed(seed, 0x7376)).with_integrator(cfg.integrator);
        let lambda = match method {
            Method::Baseline => {
                let train = crate::net::DsmConfig { seed: rng::derive_seed(seed, 0x6e6e), ..cfg.baseline_config() };
                let net = MlpScoreNet::init(NetArch::default_for(cfg.dim), rng::derive_seed(seed, 0x696e))?;
                let fit = dsm_train(net, data, &cfg.schedule, &train)?;
                return Ok((None, reverse_sample(&fit.net, &reverse)?));
            }
            Method::Scorefusion => {
                let fusion = crate::fusion::FusionTrainConfig { seed: rng::derive_seed(seed, 0x7366), ..cfg.fusion_config() };
                fit_score_fusion(&self.aux, data, &cfg.schedule, &fusion)?.weights
            }
            Method::Vanilla => {
                let g = covering_grid(&self.aux_mixtures, cfg.vanilla.grid_points)?;
                run_vanilla_fusion(data, &self.aux_mixtures, &g, cfg.vanilla.tau_max)?.weights
            }
        };
        let fused = fused_score(self.aux.clone(), lambda.clone())?;
        Ok((Some(lambda), reverse_sample(&fused, &reverse)?))
    }

    fn run_cell(&self, method: Method, size: usize, seed: u64) -> CellReport {
        let start = Instant::now();
        let mut cell = CellReport {
            method,
            size,
            seed,
            lambda: None,
            w1: Vec::new(),
            w1_mean: None,
            w1_se: None,
            error: None,
            wall_clock_s: 0.0,
            histogram: None,
        };
        let outcome = (|| -> Result<()> {
            let data = self.truth.sample(size, data_seed(seed, size))?;
            let (lambda, generated) = self.generate(method, &data, method_seed(seed, size, method))?;
            cell.lambda = lambda;
            let mut model: Vec<f64> = generated.values_1d()?.to_vec();
            if model.iter().any(|v| v.is_nan()) {
                return Err(Error::InvalidInput("generated samples contain NaN".into()));
            }
            model.sort_by(f64::total_cmp);
            for r in 0..self.cfg.eval_repeats {
                let mut truth = self.truth.sample(self.cfg.eval_samples, truth_seed(seed, size, r))?.values_1d()?.to_vec();
                truth.sort_by(f64::total_cmp);
                cell.w1.push(wasserstein1_sorted(&model, &truth));
            }
            let n = cell.w1.len() as f64;
            let mean = cell.w1.iter().sum::<f64>() / n;
            let var = if cell.w1.len() > 1 { cell.w1.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            cell.w1_mean = Some(mean);
            cell.w1_se = Some((var / n).sqrt());
            let (lo, hi) = hist_range(&model);
            cell.histogram = Some(histogram(&generated, self.cfg.hist_bins, (lo, hi))?);
            Ok(())
        })();
        if let Err(e) = outcome {
            cell.error = Some(e.to_string());
        }
        cell.wall_clock_s = start.elapsed().as_secs_f64();
        cell
    }
}

fn hist_range(sorted: &[f64]) -> (f64, f64) {
    let finite: Vec<f64> = sorted.iter().cloned().filter(|v| v.is_finite()).collect();
    match (finite.first(), finite.last()) {
        (Some(&lo), Some(&hi)) if hi > lo => (lo, hi),
        (Some(&lo), _) => (lo - 0.5, lo + 0.5),
        _ => (-1.0, 1.0),
    }
}

/// Runs every (method, size, seed) cell. Cell failures are recorded in the
/// report instead of aborting the run; 1-D targets only, since W1 is the 1-D
/// distance.
pub fn run_experiment(cfg: &ExperimentConfig, base_dir: &Path) -> Result<ExperimentReport> {
    cfg.validate()?;
    if cfg.dim != 1 {
        return Err(Error::Schema("the experiment runner evaluates 1-D targets".into()));
    }
    let (aux, aux_mixtures) = resolve_aux(cfg, base_dir)?;
    let ctx = Context { cfg, aux, aux_mixtures, truth: cfg.target.sampler()? };

    let mut jobs = Vec::new();
    for &size in &cfg.sizes {
        for &seed in &cfg.seeds {
            for &method in &cfg.methods {
                jobs.push((method, size, seed));
            }
        }
    }
    let cells: Vec<CellReport> = jobs.par_iter().map(|&(m, n, s)| ctx.run_cell(m, n, s)).collect();
    let partial = cells.iter().any(|c| c.error.is_some());
    Ok(ExperimentReport { schema_version: REPORT_SCHEMA_VERSION, config: cfg.clone(), cells, partial, environment: Environment::current() })
}

/// Writes `report.json` and one `hist_<method>_<n>_<seed>.csv` per
/// successful cell.
pub fn write_report(report: &ExperimentReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("report.json"), report.to_json()?)?;
    for c in &report.cells {
        if let Some(h) = &c.histogram {
            let name = format!("hist_{}_{}_{}.csv", c.method.name(), c.size, c.seed);
            h.write_csv(std::io::BufWriter::new(std::fs::File::create(out_dir.join(name))?))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_version_is_checked() {
        let mut cfg = ExperimentConfig::canonical();
        cfg.sizes = vec![16];
        cfg.seeds = vec![0];
        cfg.methods = vec![Method::Vanilla];
        cfg.eval_samples = 200;
        cfg.eval_repeats = 2;
        cfg.schedule = cfg.schedule.with_steps(50).unwrap();
        let report = run_experiment(&cfg, Path::new(".")).unwrap();
        assert!(!report.partial);
        let json = report.to_json().unwrap();
        assert_eq!(ExperimentReport::from_json(&json).unwrap().payload().unwrap(), report.payload().unwrap());
        let bad = json.replacen("\"schema_version\": 1", "\"schema_version\": 7", 1);
        assert!(matches!(ExperimentReport::from_json(&bad), Err(Error::SchemaVersion { found: 7, .. })));
    }

    #[test]
    fn out_dir_precedence() {
        assert_eq!(resolve_out_dir(Some(Path::new("a")), Some(Path::new("b"))), PathBuf::from("a"));
    }
}
