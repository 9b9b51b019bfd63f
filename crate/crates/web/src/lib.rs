//! WebAssembly bindings for the static demo page in `www/`.
//!
//! The demo works with two fixed 1-D bimodal references. Every export takes
//! and returns flat `f64` arrays so the page needs no glue beyond the
//! generated bindings.

use std::sync::Arc;

use scorefusion::barycenter::barycenter_density_grid;
use scorefusion::fusion::{fit_score_fusion, FusionTrainConfig};
use scorefusion::metrics::histogram;
use scorefusion::ou::analytic_score;
use scorefusion::sampler::{fused_score, reverse_sample, ReverseConfig};
use scorefusion::vanilla::{covering_grid, run_vanilla_fusion};
use scorefusion::{rng, FieldHandle, GaussianMixture, Grid, OuSchedule, SimplexWeights};
use wasm_bindgen::prelude::*;

const GRID_POINTS: usize = 801;

fn js_err(e: scorefusion::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn pair(lambda: f64) -> Result<SimplexWeights, JsError> {
    SimplexWeights::new(vec![lambda, 1.0 - lambda]).map_err(js_err)
}

#[wasm_bindgen]
pub struct Demo {
    refs: [GaussianMixture; 2],
    grid: Grid,
    schedule: OuSchedule,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Result<Demo, JsError> {
        let refs = [
            GaussianMixture::univariate(&[(0.5, -4.0, 1.0), (0.5, 4.0, 1.0)]).map_err(js_err)?,
            GaussianMixture::univariate(&[(0.5, -2.0, 0.5), (0.5, 2.0, 0.5)]).map_err(js_err)?,
        ];
        let grid = covering_grid(&refs, GRID_POINTS).map_err(js_err)?;
        let schedule = OuSchedule::new(1.0, 2f64.sqrt(), 5.0, 200).map_err(js_err)?;
        Ok(Demo { refs, grid, schedule })
    }

    /// Abscissae shared by every density curve.
    pub fn grid(&self) -> Vec<f64> {
        self.grid.points().into_iter().map(|p| p[0]).collect()
    }

    /// Density of reference `i` on the grid.
    pub fn reference(&self, i: usize) -> Result<Vec<f64>, JsError> {
        let m = self.refs.get(i).ok_or_else(|| JsError::new("reference index out of range"))?;
        self.grid.points().iter().map(|x| m.log_density(x).map(f64::exp).map_err(js_err)).collect()
    }

    /// Barycenter density `∝ p₁^λ p₂^(1−λ)` on the grid.
    pub fn barycenter(&self, lambda: f64) -> Result<Vec<f64>, JsError> {
        let bg = barycenter_density_grid(&[&self.refs[0], &self.refs[1]], &pair(lambda)?, &self.grid).map_err(js_err)?;
        Ok(bg.values())
    }

    /// Reverse-SDE samples under the fused score, binned over the grid range
    /// and normalized to a density.
    pub fn fused_histogram(&self, lambda: f64, n_samples: usize, bins: usize, seed: u64) -> Result<Vec<f64>, JsError> {
        let fused = fused_score(self.fields(), pair(lambda)?).map_err(js_err)?;
        let samples = reverse_sample(&fused, &ReverseConfig::new(self.schedule, n_samples, seed)).map_err(js_err)?;
        let (lo, hi) = self.grid.bounds()[0];
        let h = histogram(&samples, bins, (lo, hi)).map_err(js_err)?;
        let width = (hi - lo) / bins as f64;
        Ok(h.counts.iter().map(|&c| c as f64 / (n_samples as f64 * width)).collect())
    }

    /// Draws `n` points from the barycenter at `lambda_true` and refits the
    /// weight. Returns `[score-matching λ₁, likelihood λ₁]`.
    pub fn recover(&self, lambda_true: f64, n: usize, seed: u64) -> Result<Vec<f64>, JsError> {
        let bg = barycenter_density_grid(&[&self.refs[0], &self.refs[1]], &pair(lambda_true)?, &self.grid).map_err(js_err)?;
        let data = bg.sample(n, &mut rng::stream(seed)).map_err(js_err)?;
        let cfg = FusionTrainConfig { n_mc: 20_000, seed, ..FusionTrainConfig::for_schedule(&self.schedule) };
        let sf = fit_score_fusion(&self.fields(), &data, &self.schedule, &cfg).map_err(js_err)?;
        let vf = run_vanilla_fusion(&data, &self.refs, &self.grid, 200).map_err(js_err)?;
        Ok(vec![sf.weights.as_slice()[0], vf.weights.as_slice()[0]])
    }
}

impl Demo {
    fn fields(&self) -> Vec<FieldHandle> {
        self.refs.iter().map(|m| Arc::new(analytic_score(m, &self.schedule)) as FieldHandle).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_share_the_grid_and_integrate_to_one() {
        let demo = Demo::new().unwrap();
        let xs = demo.grid();
        let dx = xs[1] - xs[0];
        for lambda in [0.0, 0.3, 1.0] {
            let d = demo.barycenter(lambda).unwrap();
            assert_eq!(d.len(), xs.len());
            assert!((d.iter().sum::<f64>() * dx - 1.0).abs() < 1e-3);
        }
        let h = demo.fused_histogram(0.5, 2_000, 40, 1).unwrap();
        let width = (xs[xs.len() - 1] - xs[0]) / 40.0;
        assert!((h.iter().sum::<f64>() * width - 1.0).abs() < 1e-2);
    }

    #[test]
    fn recovery_lands_near_the_planted_weight() {
        let demo = Demo::new().unwrap();
        let fit = demo.recover(0.7, 2_000, 3).unwrap();
        assert!(fit.iter().all(|l| (l - 0.7).abs() < 0.1), "{fit:?}");
    }
}
