use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::barycenter::{barycenter_density_grid, gaussian_barycenter, InverseCdf};
use crate::error::{check_dim, Error, Result};
use crate::fusion::FusionTrainConfig;
use crate::grid::Grid;
use crate::mixture::{GaussianMixture, LogDensity};
use crate::net::DsmConfig;
use crate::rng;
use crate::sampler::Integrator;
use crate::samples::SampleSet;
use crate::schedule::OuSchedule;
use crate::simplex::SimplexWeights;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Grid resolution for realizing a barycenter target.
pub const TRUTH_GRID_POINTS: usize = 4096;

/// Where the target distribution comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    Mixture { mixture: GaussianMixture },
    /// `p ∝ Π p_i^{λ_i}`.
    Barycenter { references: Vec<GaussianMixture>, weights: SimplexWeights },
}

/// A target that can be sampled exactly (up to grid resolution).
#[derive(Debug, Clone)]
pub enum TargetSampler {
    Mixture(GaussianMixture),
    Grid(InverseCdf),
}

impl TargetSampler {
    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleSet> {
        let mut r = rng::stream(seed);
        let s = match self {
            Self::Mixture(m) => m.sample(n, &mut r)?,
            Self::Grid(g) => g.sample(n, &mut r)?,
        };
        Ok(s.with_label("target", Some(seed)))
    }
}

impl TargetSpec {
    pub fn dim(&self) -> Result<usize> {
        match self {
            Self::Mixture { mixture } => Ok(mixture.dim()),
            Self::Barycenter { references, weights } => {
                let first = references.first().ok_or_else(|| Error::Schema("barycenter target without references".into()))?;
                for r in references {
                    check_dim(first.dim(), r.dim())?;
                }
                if weights.k() != references.len() {
                    return Err(Error::Schema(format!("{} weights for {} references", weights.k(), references.len())));
                }
                Ok(first.dim())
            }
        }
    }

    /// Single-Gaussian references use the closed form; anything else is
    /// tabulated on a 4096-point grid over the references' mean ± 8 std and
    /// sampled by inverse CDF (1-D only).
    pub fn sampler(&self) -> Result<TargetSampler> {
        let dim = self.dim()?;
        match self {
            Self::Mixture { mixture } => Ok(TargetSampler::Mixture(mixture.clone())),
            Self::Barycenter { references, weights } => {
                if references.iter().all(|r| r.components().len() == 1) {
                    return Ok(TargetSampler::Mixture(gaussian_barycenter(references, weights)?));
                }
                if dim != 1 {
                    return Err(Error::Schema("barycenter targets of mixtures are supported in one dimension only".into()));
                }
                let boxes: Vec<Vec<(f64, f64)>> = references.iter().map(|r| r.covering_box(8.0)).collect();
                let g = Grid::covering(&boxes, TRUTH_GRID_POINTS)?;
                let refs: Vec<&dyn LogDensity> = references.iter().map(|r| r as &dyn LogDensity).collect();
                Ok(TargetSampler::Grid(barycenter_density_grid(&refs, weights, &g)?.sampler()?))
            }
        }
    }
}

/// An auxiliary score model: an exact mixture score, or a stored field file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuxSpec {
    Mixture { mixture: GaussianMixture },
    /// Path to a file written by `save_field`, relative to the config file.
    Checkpoint { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Scorefusion,
    Vanilla,
    Baseline,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Scorefusion => "scorefusion",
            Self::Vanilla => "vanilla",
            Self::Baseline => "baseline",
        }
    }

    pub(crate) fn code(&self) -> u64 {
        match self {
            Self::Scorefusion => 1,
            Self::Vanilla => 2,
            Self::Baseline => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VanillaConfig {
    pub grid_points: usize,
    pub tau_max: usize,
}

impl Default for VanillaConfig {
    fn default() -> Self {
        Self { grid_points: 2001, tau_max: 500 }
    }
}

/// One JSON file describing a low-data comparison sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dim: usize,
    pub target: TargetSpec,
    pub auxiliaries: Vec<AuxSpec>,
    #[serde(default)]
    pub schedule: OuSchedule,
    #[serde(default)]
    pub integrator: Integrator,
    /// Defaults to the schedule-derived settings.
    #[serde(default)]
    pub fusion: Option<FusionTrainConfig>,
    #[serde(default)]
    pub vanilla: VanillaConfig,
    /// Defaults to the schedule-derived settings with a 4:1 split.
    #[serde(default)]
    pub baseline: Option<DsmConfig>,
    pub sizes: Vec<usize>,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    #[serde(default = "default_eval_repeats")]
    pub eval_repeats: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    #[serde(default = "default_hist_bins")]
    pub hist_bins: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_eval_samples() -> usize {
    8096
}

fn default_eval_repeats() -> usize {
    10
}

fn default_hist_bins() -> usize {
    200
}

impl ExperimentConfig {
    /// Two bimodal references and a target at their barycenter with
    /// `λ = (0.6, 0.4)`.
    pub fn canonical() -> Self {
        let p1 = GaussianMixture::univariate(&[(0.5, -4.0, 1.0), (0.5, 4.0, 1.0)]).expect("valid mixture");
        let p2 = GaussianMixture::univariate(&[(0.5, -2.0, 0.5), (0.5, 2.0, 0.5)]).expect("valid mixture");
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            dim: 1,
            target: TargetSpec::Barycenter {
                references: vec![p1.clone(), p2.clone()],
                weights: SimplexWeights::new(vec![0.6, 0.4]).expect("valid weights"),
            },
            auxiliaries: vec![AuxSpec::Mixture { mixture: p1 }, AuxSpec::Mixture { mixture: p2 }],
            schedule: OuSchedule::default(),
            integrator: Integrator::default(),
            fusion: None,
            vanilla: VanillaConfig::default(),
            baseline: None,
            sizes: vec![32, 64, 128, 256, 1024],
            eval_samples: default_eval_samples(),
            eval_repeats: default_eval_repeats(),
            seeds: vec![0, 1, 2, 3, 4],
            methods: vec![Method::Scorefusion, Method::Vanilla, Method::Baseline],
            hist_bins: default_hist_bins(),
            out_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: serde_json::Value = serde_json::from_str(text)?;
        let found = probe.get("schema_version").and_then(|v| v.as_u64()).ok_or_else(|| Error::Schema("missing schema_version".into()))?;
        if found != CONFIG_SCHEMA_VERSION as u64 {
            return Err(Error::SchemaVersion { found: found as u32, expected: CONFIG_SCHEMA_VERSION });
        }
        let cfg: Self = serde_json::from_value(probe)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.dim, self.target.dim()?)?;
        if self.methods.is_empty() {
            return Err(Error::Schema("no method enabled".into()));
        }
        if self.sizes.is_empty() || self.sizes[0] == 0 || self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Schema("sizes must be positive and strictly increasing".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Schema("no seeds given".into()));
        }
        if self.eval_samples == 0 || self.eval_repeats == 0 || self.hist_bins == 0 {
            return Err(Error::Schema("evaluation counts must be positive".into()));
        }
        let fusing = self.methods.iter().any(|m| *m != Method::Baseline);
        if fusing && self.auxiliaries.is_empty() {
            return Err(Error::Schema("fusion methods need auxiliaries".into()));
        }
        if self.methods.contains(&Method::Vanilla) {
            if self.dim > 2 {
                return Err(Error::Schema("vanilla fusion is limited to dimension 1 or 2".into()));
            }
            if self.auxiliaries.iter().any(|a| matches!(a, AuxSpec::Checkpoint { .. })) {
                return Err(Error::Schema("vanilla fusion needs mixture auxiliaries (log-densities)".into()));
            }
        }
        for a in &self.auxiliaries {
            if let AuxSpec::Mixture { mixture } = a {
                check_dim(self.dim, mixture.dim())?;
            }
        }
        self.fusion_config().validate(&self.schedule)?;
        Ok(())
    }

    pub fn fusion_config(&self) -> FusionTrainConfig {
        self.fusion.unwrap_or_else(|| FusionTrainConfig::for_schedule(&self.schedule))
    }

    pub fn baseline_config(&self) -> DsmConfig {
        self.baseline.unwrap_or_else(|| DsmConfig { val_fraction: 0.2, ..DsmConfig::for_schedule(&self.schedule) })
    }
}
