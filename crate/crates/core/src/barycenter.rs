//! Distribution-level KL barycenters `p_λ ∝ Π p_i^{λ_i}`.
//!
//! Closed form for single Gaussians; trapezoidal quadrature on a 1-D or 2-D
//! grid for anything else.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::field::ScoreField;
use crate::grid::Grid;
use crate::mixture::{Component, GaussianMixture, LogDensity};
use crate::ou::transition_unchecked;
use crate::samples::SampleSet;
use crate::schedule::OuSchedule;
use crate::simplex::SimplexWeights;

const MAX_GRID_TAIL_MASS: f64 = 1e-4;

/// Geometric mixture of single Gaussians: per coordinate, precision
/// `Σ λ_i / v_i` and mean `v* Σ λ_i μ_i / v_i`.
pub fn gaussian_barycenter(components: &[GaussianMixture], w: &SimplexWeights) -> Result<GaussianMixture> {
    let first = components.first().ok_or_else(|| Error::InvalidInput("no Gaussians given".into()))?;
    if w.k() != components.len() {
        return Err(Error::InvalidInput(format!("{} weights for {} Gaussians", w.k(), components.len())));
    }
    let dim = first.dim();
    for g in components {
        check_dim(dim, g.dim())?;
        if g.components().len() != 1 {
            return Err(Error::InvalidInput("gaussian_barycenter takes single-component inputs".into()));
        }
    }
    let lambda = w.as_slice();
    if let Some(i) = lambda.iter().position(|&l| l == 1.0) {
        return Ok(components[i].clone());
    }
    let mut mean = vec![0.0; dim];
    let mut var = vec![0.0; dim];
    for d in 0..dim {
        let (mut precision, mut weighted_mean) = (0.0, 0.0);
        for (g, &l) in components.iter().zip(lambda) {
            let c = &g.components()[0];
            precision += l / c.var[d];
            weighted_mean += l * c.mean[d] / c.var[d];
        }
        var[d] = 1.0 / precision;
        mean[d] = var[d] * weighted_mean;
    }
    GaussianMixture::new(dim, vec![Component { weight: 1.0, mean, var }])
}

/// Normalized barycenter density tabulated on a grid.
#[derive(Debug, Clone)]
pub struct BarycenterGrid {
    grid: Grid,
    log_values: Vec<f64>,
    log_z: f64,
}

fn check_refs(refs: &[&dyn LogDensity], w: &SimplexWeights, g: &Grid) -> Result<()> {
    let first = refs.first().ok_or_else(|| Error::InvalidInput("no reference densities".into()))?;
    if w.k() != refs.len() {
        return Err(Error::InvalidInput(format!("{} weights for {} references", w.k(), refs.len())));
    }
    for r in refs {
        check_dim(first.dim(), r.dim())?;
    }
    check_dim(g.dim(), first.dim())?;
    for (i, r) in refs.iter().enumerate() {
        if let Some(mass) = r.mass_outside(g) {
            if mass > MAX_GRID_TAIL_MASS {
                return Err(Error::InsufficientGrid { reference: i, mass });
            }
        }
    }
    Ok(())
}

/// `Σ λ_i log p_i(x)` at every grid node, skipping zero weights.
pub(crate) fn weighted_log_values(refs: &[&dyn LogDensity], w: &SimplexWeights, g: &Grid) -> Vec<f64> {
    let lambda = w.as_slice();
    (0..g.len())
        .into_par_iter()
        .map(|idx| {
            let x = g.point(idx);
            refs.iter().zip(lambda).filter(|(_, &l)| l != 0.0).map(|(r, &l)| l * r.log_density_at(&x)).sum()
        })
        .collect()
}

pub fn barycenter_density_grid(refs: &[&dyn LogDensity], w: &SimplexWeights, g: &Grid) -> Result<BarycenterGrid> {
    check_refs(refs, w, g)?;
    let unnormalized = weighted_log_values(refs, w, g);
    let log_z = g.log_integrate_exp(&unnormalized);
    if !log_z.is_finite() {
        return Err(Error::InvalidInput("barycenter has no mass on the grid".into()));
    }
    let log_values = unnormalized.into_iter().map(|l| l - log_z).collect();
    Ok(BarycenterGrid { grid: g.clone(), log_values, log_z })
}

/// `log ∫ Π p_i^{λ_i}` by trapezoidal quadrature.
pub fn barycenter_log_partition(refs: &[&dyn LogDensity], w: &SimplexWeights, g: &Grid) -> Result<f64> {
    Ok(barycenter_density_grid(refs, w, g)?.log_z)
}

impl BarycenterGrid {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }

    pub fn values(&self) -> Vec<f64> {
        self.log_values.iter().map(|l| l.exp()).collect()
    }

    /// Trapezoid estimate of `E_{p_λ}[f]` for `f` tabulated at the nodes.
    pub fn expectation(&self, f: &[f64]) -> f64 {
        self.log_values.iter().zip(f).enumerate().map(|(i, (l, v))| self.grid.weight(i) * l.exp() * v).sum()
    }

    fn axis_1d(&self) -> Result<crate::grid::Axis> {
        match self.grid.axes() {
            [a] => Ok(*a),
            _ => Err(Error::DimMismatch { expected: 1, actual: self.grid.dim() }),
        }
    }

    /// Inverse-CDF sampling of the piecewise-linear interpolant (1-D only).
    pub fn sampler(&self) -> Result<InverseCdf> {
        let axis = self.axis_1d()?;
        let values = self.values();
        let h = axis.spacing();
        let mut cdf = Vec::with_capacity(values.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in values.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            cdf.push(acc);
        }
        Ok(InverseCdf { lo: axis.lo, h, values, cdf })
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<SampleSet> {
        self.sampler()?.sample(n, rng)
    }

    /// Exact score of the barycenter pushed forward by the OU process,
    /// evaluated by quadrature against the Gaussian transition kernel (1-D only).
    pub fn diffused_score(&self, schedule: OuSchedule) -> Result<GridDiffusedScore> {
        let axis = self.axis_1d()?;
        Ok(GridDiffusedScore {
            lo: axis.lo,
            h: axis.spacing(),
            log_mass: self.log_values.iter().enumerate().map(|(i, l)| l + axis.weight(i).ln()).collect(),
            schedule,
        })
    }

    /// CSV `x,value` (1-D) or `x0,x1,value` (2-D).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header = if self.grid.dim() == 1 { "x,value" } else { "x0,x1,value" };
        writeln!(out, "{header}")?;
        for (i, l) in self.log_values.iter().enumerate() {
            let p: Vec<String> = self.grid.point(i).iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{},{:?}", p.join(","), l.exp())?;
        }
        Ok(())
    }
}

/// Inverse CDF of a piecewise-linear density on a uniform 1-D grid.
#[derive(Debug, Clone)]
pub struct InverseCdf {
    lo: f64,
    h: f64,
    values: Vec<f64>,
    cdf: Vec<f64>,
}

impl InverseCdf {
    pub fn quantile(&self, u: f64) -> f64 {
        let total = *self.cdf.last().expect("grid has at least two nodes");
        let target = u.clamp(0.0, 1.0) * total;
        let k = match self.cdf.partition_point(|&c| c <= target) {
            0 => 0,
            p => (p - 1).min(self.cdf.len() - 2),
        };
        let r = target - self.cdf[k];
        let (p0, p1) = (self.values[k], self.values[k + 1]);
        let slope = (p1 - p0) / self.h;
        // Solve p0 s + slope s² / 2 = r for s in [0, h].
        let s = if slope.abs() < 1e-300 {
            if p0 > 0.0 { r / p0 } else { 0.0 }
        } else {
            let disc = (p0 * p0 + 2.0 * slope * r).max(0.0);
            2.0 * r / (p0 + disc.sqrt())
        };
        self.lo + k as f64 * self.h + s.clamp(0.0, self.h)
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<SampleSet> {
        if n == 0 {
            return Err(Error::InvalidInput("sample count must be at least 1".into()));
        }
        let data = (0..n).map(|_| self.quantile(rng.random::<f64>())).collect();
        SampleSet::new(1, data, "barycenter-grid", None)
    }
}

/// `∇ log p_t` for a grid-tabulated 1-D density `p_0`.
#[derive(Debug, Clone)]
pub struct GridDiffusedScore {
    lo: f64,
    h: f64,
    /// `log(p_0(y_j) · w_j)` with trapezoid weights folded in.
    log_mass: Vec<f64>,
    schedule: OuSchedule,
}

impl GridDiffusedScore {
    fn node(&self, j: usize) -> f64 {
        self.lo + j as f64 * self.h
    }
}

impl ScoreField for GridDiffusedScore {
    fn dim(&self) -> usize {
        1
    }

    fn evaluate_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let tp = transition_unchecked(&self.schedule, t.max(0.0));
        let x = x[0];
        let n = self.log_mass.len();
        // Kernel narrower than the grid cannot be resolved; use the
        // smallest resolvable bandwidth instead.
        let v = tp.var_t.max((0.5 * self.h * tp.decay).powi(2));
        let sd = v.sqrt();
        let to_index = |y: f64| ((y - self.lo) / self.h).floor();
        let (mut j0, mut j1) = {
            let a = to_index((x - 12.0 * sd) / tp.decay);
            let b = to_index((x + 12.0 * sd) / tp.decay) + 1.0;
            (a.max(0.0) as usize, (b.min((n - 1) as f64).max(0.0)) as usize)
        };
        if j0 > j1 || j0 >= n {
            j0 = 0;
            j1 = n - 1;
        }
        let mut max = f64::NEG_INFINITY;
        let (mut sum, mut acc) = (0.0, 0.0);
        for j in j0..=j1 {
            let lm = self.log_mass[j];
            if lm == f64::NEG_INFINITY {
                continue;
            }
            let mean = tp.decay * self.node(j);
            let r = x - mean;
            let l = lm - r * r / (2.0 * v);
            let w = if l > max {
                let scale = (max - l).exp();
                sum *= scale;
                acc *= scale;
                max = l;
                1.0
            } else {
                (l - max).exp()
            };
            sum += w;
            acc += w * (mean - x) / v;
        }
        out[0] = acc / sum;
    }
}
