//! Reverse-time generation from a (possibly λ-fused) score field.
//!
//! Starting from the stationary law `π = N(0, σ²/2a I)`, each interval
//! `[lh, (l+1)h]` integrates `dY = (aY + σ² s(T - lh, Y(lh))) dt + σ dW` with
//! the score frozen at the left endpoint.

use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::field::{FieldHandle, ScoreField};
use crate::rng;
use crate::samples::SampleSet;
use crate::schedule::OuSchedule;
use crate::simplex::SimplexWeights;
use rand::Rng;

/// `s(t, x) = Σ_i λ_i s_i(t, x)`.
#[derive(Clone)]
pub struct FusedScore {
    fields: Vec<FieldHandle>,
    weights: SimplexWeights,
    dim: usize,
}

impl std::fmt::Debug for FusedScore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FusedScore").field("k", &self.fields.len()).field("weights", &self.weights).finish()
    }
}

pub fn fused_score(fields: Vec<FieldHandle>, w: SimplexWeights) -> Result<FusedScore> {
    let first = fields.first().ok_or_else(|| Error::InvalidInput("no fields to fuse".into()))?;
    let dim = first.dim();
    for f in &fields {
        check_dim(dim, f.dim())?;
    }
    if w.k() != fields.len() {
        return Err(Error::InvalidInput(format!("{} weights for {} fields", w.k(), fields.len())));
    }
    Ok(FusedScore { fields, weights: w, dim })
}

impl FusedScore {
    pub fn weights(&self) -> &SimplexWeights {
        &self.weights
    }
}

impl ScoreField for FusedScore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let lambda = self.weights.as_slice();
        let mut active = lambda.iter().enumerate().filter(|(_, &l)| l != 0.0);
        let (first, &l0) = active.next().expect("simplex weights have a positive entry");
        self.fields[first].evaluate_into(t, x, out);
        out.iter_mut().for_each(|o| *o *= l0);
        let mut scratch = Vec::new();
        for (i, &l) in active {
            scratch.resize(self.dim, 0.0);
            self.fields[i].evaluate_into(t, x, &mut scratch);
            out.iter_mut().zip(&scratch).for_each(|(o, s)| *o += l * s);
        }
    }

    fn evaluate_batch(&self, t: f64, xs: &[f64], out: &mut [f64]) {
        let lambda = self.weights.as_slice();
        let mut active = lambda.iter().enumerate().filter(|(_, &l)| l != 0.0);
        let (first, &l0) = active.next().expect("simplex weights have a positive entry");
        self.fields[first].evaluate_batch(t, xs, out);
        out.iter_mut().for_each(|o| *o *= l0);
        let mut scratch = Vec::new();
        for (i, &l) in active {
            scratch.resize(xs.len(), 0.0);
            self.fields[i].evaluate_batch(t, xs, &mut scratch);
            out.iter_mut().zip(&scratch).for_each(|(o, s)| *o += l * s);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    EulerMaruyama,
    /// Exact solve of the per-interval linear SDE.
    #[default]
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReverseConfig {
    pub schedule: OuSchedule,
    #[serde(default)]
    pub integrator: Integrator,
    pub n_samples: usize,
    pub seed: u64,
}

impl ReverseConfig {
    pub fn new(schedule: OuSchedule, n_samples: usize, seed: u64) -> Self {
        Self { schedule, integrator: Integrator::default(), n_samples, seed }
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }
}

/// Per-step affine map `y ← mean_scale·y + drift_scale·s + noise_sd·ξ`.
struct StepCoefficients {
    mean_scale: f64,
    drift_scale: f64,
    noise_sd: f64,
}

impl StepCoefficients {
    fn new(s: &OuSchedule, integrator: Integrator) -> Self {
        let (a, sigma2, h) = (s.a(), s.sigma() * s.sigma(), s.step());
        match integrator {
            Integrator::EulerMaruyama => Self { mean_scale: 1.0 + a * h, drift_scale: sigma2 * h, noise_sd: (sigma2 * h).sqrt() },
            Integrator::Exponential => {
                // Y(h) = e^{ah} Y0 + (σ²/a)(e^{ah} - 1) s + N(0, σ²(e^{2ah} - 1) / 2a)
                let growth = (a * h).exp_m1();
                Self {
                    mean_scale: 1.0 + growth,
                    drift_scale: sigma2 * growth / a,
                    noise_sd: (sigma2 * (2.0 * a * h).exp_m1() / (2.0 * a)).sqrt(),
                }
            }
        }
    }
}

/// Trajectories advanced together so the score is evaluated in batches.
const BLOCK: usize = 256;

/// Simulates `cfg.n_samples` independent reverse trajectories and returns
/// their terminal states. Trajectory `i` uses substream `(seed, i)`, so the
/// output does not depend on the number of worker threads.
pub fn reverse_sample(score: &dyn ScoreField, cfg: &ReverseConfig) -> Result<SampleSet> {
    if cfg.n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be at least 1".into()));
    }
    let dim = score.dim();
    let coef = StepCoefficients::new(&cfg.schedule, cfg.integrator);
    let prior_sd = cfg.schedule.stationary_var().sqrt();
    let (h, horizon, steps) = (cfg.schedule.step(), cfg.schedule.horizon(), cfg.schedule.steps());

    let blocks: Vec<(Vec<f64>, Option<(usize, usize)>)> = (0..cfg.n_samples.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let first = b * BLOCK;
            let m = BLOCK.min(cfg.n_samples - first);
            let mut rngs: Vec<rng::Stream> = (first..first + m).map(|i| rng::substream(cfg.seed, i as u64)).collect();
            let mut y: Vec<f64> = Vec::with_capacity(m * dim);
            for r in rngs.iter_mut() {
                y.extend((0..dim).map(|_| prior_sd * r.sample::<f64, _>(StandardNormal)));
            }
            let mut s = vec![0.0; m * dim];
            let mut diverged: Option<(usize, usize)> = None;
            for l in 0..steps {
                let t = horizon - l as f64 * h;
                score.evaluate_batch(t, &y, &mut s);
                for (j, r) in rngs.iter_mut().enumerate() {
                    let (yj, sj) = (&mut y[j * dim..(j + 1) * dim], &s[j * dim..(j + 1) * dim]);
                    for k in 0..dim {
                        let z: f64 = r.sample(StandardNormal);
                        yj[k] = coef.mean_scale * yj[k] + coef.drift_scale * sj[k] + coef.noise_sd * z;
                    }
                    if diverged.is_none_or(|(i, _)| first + j < i) && yj.iter().any(|v| !v.is_finite()) {
                        diverged = Some((first + j, l));
                    }
                }
                if diverged.is_some_and(|(i, _)| i == first) {
                    break;
                }
            }
            (y, diverged)
        })
        .collect();

    let mut data = Vec::with_capacity(cfg.n_samples * dim);
    for (y, diverged) in blocks {
        if let Some((trajectory, step)) = diverged {
            return Err(Error::Diverged { trajectory, step });
        }
        data.extend(y);
    }
    SampleSet::new(dim, data, "reverse-sde", Some(cfg.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::GaussianMixture;
    use crate::ou::analytic_score;
    use std::sync::Arc;

    struct Exploding;

    impl ScoreField for Exploding {
        fn dim(&self) -> usize {
            1
        }
        fn evaluate_into(&self, t: f64, _x: &[f64], out: &mut [f64]) {
            out[0] = if t < 2.5 { f64::INFINITY } else { 0.0 };
        }
    }

    #[test]
    fn reports_diverged_step() {
        let s = OuSchedule::new(1.0, 1.0, 5.0, 10).unwrap();
        let err = reverse_sample(&Exploding, &ReverseConfig::new(s, 4, 0)).unwrap_err();
        // t = 5 - 0.5 l drops below 2.5 first at l = 6
        assert!(matches!(err, Error::Diverged { trajectory: 0, step: 6 }));
    }

    #[test]
    fn fused_score_validates_shapes() {
        let s = OuSchedule::default();
        let a: FieldHandle = Arc::new(analytic_score(&GaussianMixture::gaussian(vec![0.0], vec![1.0]).unwrap(), &s));
        let b: FieldHandle = Arc::new(analytic_score(&GaussianMixture::gaussian(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(), &s));
        assert!(fused_score(vec![a.clone(), b], SimplexWeights::uniform(2).unwrap()).is_err());
        assert!(fused_score(vec![a.clone()], SimplexWeights::uniform(2).unwrap()).is_err());
        assert!(fused_score(vec![], SimplexWeights::uniform(1).unwrap()).is_err());
        assert!(fused_score(vec![a], SimplexWeights::uniform(1).unwrap()).is_ok());
    }
}
