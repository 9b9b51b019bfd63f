//! Diagonal-covariance Gaussian mixtures: the closed-form density and score
//! oracle behind every target, reference and auxiliary distribution.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::grid::Grid;
use crate::samples::SampleSet;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// One weighted component `weight * N(mean, diag(var))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMixture {
    dim: usize,
    components: Vec<Component>,
}

/// A weighted mixture of diagonal Gaussians.
///
/// Serializes as `{dim, components: [{weight, mean, var}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixture")]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
}

impl TryFrom<RawMixture> for GaussianMixture {
    type Error = Error;

    fn try_from(raw: RawMixture) -> Result<Self> {
        GaussianMixture::new(raw.dim, raw.components)
    }
}

impl GaussianMixture {
    pub fn new(dim: usize, components: Vec<Component>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("mixture dimension must be positive".into()));
        }
        if components.is_empty() {
            return Err(Error::InvalidInput("mixture needs at least one component".into()));
        }
        let mut total = 0.0;
        for (j, c) in components.iter().enumerate() {
            check_dim(dim, c.mean.len())?;
            check_dim(dim, c.var.len())?;
            if !(c.weight >= 0.0) || !c.weight.is_finite() {
                return Err(Error::InvalidInput(format!("component {j} has invalid weight {}", c.weight)));
            }
            if c.var.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidInput(format!("component {j} has a non-positive variance")));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::InvalidInput(format!("component {j} has a non-finite mean")));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("component weights sum to {total}, not 1")));
        }
        Ok(Self { dim, components })
    }

    /// Single Gaussian `N(mean, diag(var))`.
    pub fn gaussian(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        let dim = mean.len();
        Self::new(dim, vec![Component { weight: 1.0, mean, var }])
    }

    /// 1-D mixture from `(weight, mean, var)` triples.
    pub fn univariate(parts: &[(f64, f64, f64)]) -> Result<Self> {
        let components = parts
            .iter()
            .map(|&(weight, mean, var)| Component { weight, mean: vec![mean], var: vec![var] })
            .collect();
        Self::new(1, components)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Per-coordinate mean and variance of the whole mixture.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let mut mean = vec![0.0; self.dim];
        let mut second = vec![0.0; self.dim];
        for c in &self.components {
            for d in 0..self.dim {
                mean[d] += c.weight * c.mean[d];
                second[d] += c.weight * (c.var[d] + c.mean[d] * c.mean[d]);
            }
        }
        let var = mean.iter().zip(&second).map(|(m, s)| s - m * m).collect();
        (mean, var)
    }

    /// Axis-aligned box covering every component's mean ± `n_std` standard deviations.
    pub fn covering_box(&self, n_std: f64) -> Vec<(f64, f64)> {
        (0..self.dim)
            .map(|d| {
                self.components.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                    let s = n_std * c.var[d].sqrt();
                    (lo.min(c.mean[d] - s), hi.max(c.mean[d] + s))
                })
            })
            .collect()
    }

    /// Mass of the mixture lying outside the box spanned by `bounds`.
    pub fn mass_outside_box(&self, bounds: &[(f64, f64)]) -> f64 {
        let inside: f64 = self
            .components
            .iter()
            .map(|c| {
                c.weight
                    * (0..self.dim)
                        .map(|d| {
                            let s = (2.0 * c.var[d]).sqrt();
                            let (lo, hi) = bounds[d];
                            0.5 * (libm::erfc((c.mean[d] - hi) / s) - libm::erfc((c.mean[d] - lo) / s))
                        })
                        .product::<f64>()
            })
            .sum();
        (1.0 - inside).max(0.0)
    }

    fn component_log_density(c: &Component, x: &[f64]) -> f64 {
        let mut acc = c.weight.ln();
        for ((&xi, &m), &v) in x.iter().zip(&c.mean).zip(&c.var) {
            let r = xi - m;
            acc -= 0.5 * (LN_2PI + v.ln() + r * r / v);
        }
        acc
    }

    /// `log p(x)` by log-sum-exp over components; no dimension check.
    pub fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for c in &self.components {
            let l = Self::component_log_density(c, x);
            if l == f64::NEG_INFINITY {
                continue;
            }
            if l > max {
                sum = sum * (max - l).exp() + 1.0;
                max = l;
            } else {
                sum += (l - max).exp();
            }
        }
        max + sum.ln()
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.log_density_unchecked(x))
    }

    /// Writes `∇ log p(x)` into `out` as the responsibility-weighted sum of
    /// component scores `(μ_j − x) / v_j`. Streaming log-sum-exp, no allocation.
    pub fn score_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for c in &self.components {
            let l = Self::component_log_density(c, x);
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
            for d in 0..self.dim {
                out[d] += w * (c.mean[d] - x[d]) / c.var[d];
            }
        }
        out.iter_mut().for_each(|o| *o /= sum);
    }

    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut out = vec![0.0; self.dim];
        self.score_into(x, &mut out);
        Ok(out)
    }

    /// Draws `n` i.i.d. samples: categorical component choice, then a Gaussian draw.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<SampleSet> {
        if n == 0 {
            return Err(Error::InvalidInput("sample count must be at least 1".into()));
        }
        let mut data = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            let c = self.pick_component(rng.random::<f64>());
            for d in 0..self.dim {
                let z: f64 = rng.sample(StandardNormal);
                data.push(c.mean[d] + c.var[d].sqrt() * z);
            }
        }
        SampleSet::new(self.dim, data, "gaussian-mixture", None)
    }

    fn pick_component(&self, u: f64) -> &Component {
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                return c;
            }
        }
        // u landed in the rounding slack above the final cumulative weight
        self.components.iter().rev().find(|c| c.weight > 0.0).unwrap_or(&self.components[0])
    }
}

/// A log-density usable as a reference in barycenter and vanilla-fusion
/// computations.
pub trait LogDensity: Send + Sync {
    fn dim(&self) -> usize;

    fn log_density_at(&self, x: &[f64]) -> f64;

    /// Probability mass outside the grid, when it can be computed.
    fn mass_outside(&self, _grid: &Grid) -> Option<f64> {
        None
    }
}

impl LogDensity for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_at(&self, x: &[f64]) -> f64 {
        self.log_density_unchecked(x)
    }

    fn mass_outside(&self, grid: &Grid) -> Option<f64> {
        (grid.dim() == self.dim).then(|| self.mass_outside_box(&grid.bounds()))
    }
}

/// Density of `N(0, 1)` at `x`; handy in tests and oracles.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn standard_normal_log_density_at_mode() {
        let m = GaussianMixture::univariate(&[(1.0, 0.0, 1.0)]).unwrap();
        assert!((m.log_density(&[0.0]).unwrap() - (-0.918_938_533_204_672_7)).abs() < 1e-12);
    }

    #[test]
    fn symmetric_mixture_density_and_score() {
        let m = GaussianMixture::univariate(&[(0.5, -1.0, 1.0), (0.5, 1.0, 1.0)]).unwrap();
        let expected = (-0.5f64).exp().ln() - 0.5 * (2.0 * PI).ln();
        assert!((m.log_density(&[0.0]).unwrap() - expected).abs() < 1e-12);
        assert_eq!(m.score(&[0.0]).unwrap()[0], 0.0);
    }

    #[test]
    fn log_sum_exp_matches_naive_sum() {
        let m = GaussianMixture::univariate(&[(0.3, 0.0, 1.0), (0.7, 4.0, 0.25)]).unwrap();
        let x: f64 = 2.0;
        let naive = 0.3 * std_normal_pdf(x) + 0.7 * std_normal_pdf((x - 4.0) / 0.5) / 0.5;
        assert!((m.log_density(&[x]).unwrap() - naive.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_gaussian_score_is_linear() {
        let m = GaussianMixture::gaussian(vec![1.5, -2.0], vec![0.5, 3.0]).unwrap();
        let s = m.score(&[0.0, 1.0]).unwrap();
        assert!((s[0] - 3.0).abs() < 1e-14);
        assert!((s[1] - (-1.0)).abs() < 1e-14);
    }

    #[test]
    fn far_tail_stays_finite() {
        let m = GaussianMixture::univariate(&[(0.5, -1.0, 0.01), (0.5, 1.0, 0.01)]).unwrap();
        let l = m.log_density(&[200.0]).unwrap();
        let s = m.score(&[200.0]).unwrap();
        assert!(l.is_finite() && s[0].is_finite());
        assert!((s[0] - (1.0 - 200.0) / 0.01).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(GaussianMixture::univariate(&[(0.5, 0.0, 1.0)]).is_err());
        assert!(GaussianMixture::univariate(&[(1.0, 0.0, 0.0)]).is_err());
        assert!(GaussianMixture::univariate(&[(1.2, 0.0, 1.0), (-0.2, 0.0, 1.0)]).is_err());
        let m = GaussianMixture::univariate(&[(1.0, 0.0, 1.0)]).unwrap();
        assert!(matches!(m.log_density(&[0.0, 1.0]), Err(Error::DimMismatch { .. })));
        assert!(matches!(m.score(&[]), Err(Error::DimMismatch { .. })));
        assert!(m.sample(0, &mut rng::stream(0)).is_err());
    }

    #[test]
    fn json_schema_round_trip_and_validation() {
        let m = GaussianMixture::univariate(&[(0.25, -1.0, 0.5), (0.75, 2.0, 1.5)]).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"dim\"") && text.contains("\"components\""));
        assert!(text.contains("\"weight\"") && text.contains("\"mean\"") && text.contains("\"var\""));
        let back: GaussianMixture = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        let bad = r#"{"dim":1,"components":[{"weight":0.5,"mean":[0.0],"var":[1.0]}]}"#;
        assert!(serde_json::from_str::<GaussianMixture>(bad).is_err());
    }

    #[test]
    fn standard_normal_sample_moments() {
        let m = GaussianMixture::univariate(&[(1.0, 0.0, 1.0)]).unwrap();
        let s = m.sample(100_000, &mut rng::stream(11)).unwrap();
        let (mean, var) = s.moments();
        assert!(mean[0].abs() < 0.02);
        assert!((var[0] - 1.0).abs() < 0.03);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let m = GaussianMixture::univariate(&[(0.4, -2.0, 1.0), (0.6, 3.0, 0.3)]).unwrap();
        let a = m.sample(1000, &mut rng::stream(3)).unwrap();
        let b = m.sample(1000, &mut rng::stream(3)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn component_proportions_follow_weights() {
        let m = GaussianMixture::univariate(&[(0.3, -10.0, 1.0), (0.7, 10.0, 1.0)]).unwrap();
        let s = m.sample(100_000, &mut rng::stream(5)).unwrap();
        let left = s.data().iter().filter(|&&x| x < 0.0).count() as f64 / 1e5;
        assert!((left - 0.3).abs() < 0.01);
        assert!((1.0 - left - 0.7).abs() < 0.01);
    }

    #[test]
    fn tail_mass_outside_box() {
        let m = GaussianMixture::univariate(&[(1.0, 0.0, 1.0)]).unwrap();
        let out = m.mass_outside_box(&[(-1.96, 1.96)]);
        assert!((out - 0.05).abs() < 1e-3);
        assert!(m.mass_outside_box(&m.covering_box(8.0)) < 1e-14);
    }
}
