//! Closed-form forward Ornstein-Uhlenbeck machinery.
//!
//! Under `dX = -a X dt + σ dW` the transition `X(t) | X(0) = x0` is Gaussian
//! with mean `e^{-at} x0` and variance `(σ²/2a)(1 - e^{-2at})` per coordinate,
//! so Gaussian mixtures stay Gaussian mixtures for all `t`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::field::ScoreField;
use crate::mixture::{Component, GaussianMixture};
use crate::schedule::OuSchedule;

/// Mean decay `e^{-at}` and added variance of the OU transition kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionParams {
    pub decay: f64,
    pub var_t: f64,
}

pub fn transition_params(s: &OuSchedule, t: f64) -> Result<TransitionParams> {
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("diffusion time must be non-negative, got {t}")));
    }
    Ok(transition_unchecked(s, t))
}

#[inline]
pub(crate) fn transition_unchecked(s: &OuSchedule, t: f64) -> TransitionParams {
    let decay = (-s.a() * t).exp();
    // -expm1 keeps precision for small t
    let var_t = s.stationary_var() * -(-2.0 * s.a() * t).exp_m1();
    TransitionParams { decay, var_t }
}

/// Exact marginal of the forward process started from `m`, at time `t`.
pub fn diffuse_mixture(m: &GaussianMixture, s: &OuSchedule, t: f64) -> Result<GaussianMixture> {
    let tp = transition_params(s, t)?;
    let components = m
        .components()
        .iter()
        .map(|c| Component {
            weight: c.weight,
            mean: c.mean.iter().map(|mu| tp.decay * mu).collect(),
            var: c.var.iter().map(|v| tp.decay * tp.decay * v + tp.var_t).collect(),
        })
        .collect();
    GaussianMixture::new(m.dim(), components)
}

/// One draw from `N(e^{-at} x0, var_t I)`.
pub fn forward_sample<R: Rng + ?Sized>(x0: &[f64], s: &OuSchedule, t: f64, rng: &mut R) -> Result<Vec<f64>> {
    let tp = transition_params(s, t)?;
    if tp.var_t == 0.0 {
        return Ok(x0.to_vec());
    }
    let sd = tp.var_t.sqrt();
    Ok(x0
        .iter()
        .map(|x| {
            let z: f64 = rng.sample(StandardNormal);
            tp.decay * x + sd * z
        })
        .collect())
}

/// Score of the transition kernel, `-(x_t - e^{-at} x0) / var_t`.
pub fn conditional_score(x_t: &[f64], x0: &[f64], s: &OuSchedule, t: f64) -> Result<Vec<f64>> {
    check_dim(x0.len(), x_t.len())?;
    let tp = transition_params(s, t)?;
    if tp.var_t <= 0.0 {
        return Err(Error::SingularTime { t });
    }
    Ok(x_t.iter().zip(x0).map(|(xt, x)| -(xt - tp.decay * x) / tp.var_t).collect())
}

/// Exact time-`t` score of a Gaussian mixture pushed through the forward process.
#[derive(Debug, Clone)]
pub struct AnalyticScore {
    mixture: GaussianMixture,
    schedule: OuSchedule,
}

impl AnalyticScore {
    pub fn new(mixture: GaussianMixture, schedule: OuSchedule) -> Self {
        Self { mixture, schedule }
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }

    pub fn schedule(&self) -> &OuSchedule {
        &self.schedule
    }
}

pub fn analytic_score(m: &GaussianMixture, s: &OuSchedule) -> AnalyticScore {
    AnalyticScore::new(m.clone(), *s)
}

impl ScoreField for AnalyticScore {
    fn dim(&self) -> usize {
        self.mixture.dim()
    }

    fn evaluate_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        // Same streaming log-sum-exp as GaussianMixture::score_into, with the
        // diffused component parameters formed on the fly.
        let tp = transition_unchecked(&self.schedule, t.max(0.0));
        let d2 = tp.decay * tp.decay;
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for c in self.mixture.components() {
            let mut l = c.weight.ln();
            for k in 0..x.len() {
                let v = d2 * c.var[k] + tp.var_t;
                let r = x[k] - tp.decay * c.mean[k];
                l -= 0.5 * (v.ln() + r * r / v);
            }
            if l == f64::NEG_INFINITY {
                continue;
            }
            let w = if l > max {
                let scale = (max - l).exp();
                sum *= scale;
                out.iter_mut().for_each(|o| *o *= scale);
                max = l;
                1.0
            } else {
                (l - max).exp()
            };
            sum += w;
            for k in 0..x.len() {
                let v = d2 * c.var[k] + tp.var_t;
                out[k] += w * (tp.decay * c.mean[k] - x[k]) / v;
            }
        }
        out.iter_mut().for_each(|o| *o /= sum);
    }
}
