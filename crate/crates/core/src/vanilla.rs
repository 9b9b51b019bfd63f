//! Distribution-level ("vanilla") fusion: minimize
//! `F(λ) = −E_ν[Σ λ_i log p_i] + log ∫ Π p_i^{λ_i}` over the simplex with
//! Frank-Wolfe. The λ-independent `E_ν[log q]` term is omitted.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::barycenter::weighted_log_values;
use crate::error::{check_dim, Error, Result};
use crate::grid::Grid;
use crate::mixture::{GaussianMixture, LogDensity};
use crate::samples::SampleSet;
use crate::simplex::SimplexWeights;

const MAX_GRID_TAIL_MASS: f64 = 1e-4;

/// Precomputed pieces of the objective: target averages of each `log p_i`
/// and the `log p_i` table on the quadrature grid.
#[derive(Debug, Clone)]
pub struct VanillaProblem {
    target_mean_logs: Vec<f64>,
    grid_logs: Vec<Vec<f64>>,
    log_weights: Vec<f64>,
}

impl VanillaProblem {
    pub fn new(target: &SampleSet, refs: &[&dyn LogDensity], g: &Grid) -> Result<Self> {
        let first = refs.first().ok_or_else(|| Error::InvalidInput("no reference densities".into()))?;
        if g.dim() > 2 {
            return Err(Error::InvalidInput("vanilla fusion supports d <= 2".into()));
        }
        if target.is_empty() {
            return Err(Error::InvalidInput("empty target sample".into()));
        }
        for r in refs {
            check_dim(first.dim(), r.dim())?;
        }
        check_dim(g.dim(), first.dim())?;
        check_dim(g.dim(), target.dim())?;
        for (i, r) in refs.iter().enumerate() {
            if let Some(mass) = r.mass_outside(g) {
                if mass > MAX_GRID_TAIL_MASS {
                    return Err(Error::InsufficientGrid { reference: i, mass });
                }
            }
        }

        let mut flagged = Vec::new();
        let mut sums = vec![0.0; refs.len()];
        for (idx, x) in target.rows().enumerate() {
            let logs: Vec<f64> = refs.iter().map(|r| r.log_density_at(x)).collect();
            if logs.iter().any(|l| !l.is_finite()) {
                flagged.push(idx);
                continue;
            }
            sums.iter_mut().zip(&logs).for_each(|(s, l)| *s += l);
        }
        if !flagged.is_empty() {
            return Err(Error::UnsupportedSamples { indices: flagged });
        }
        let n = target.len() as f64;
        let target_mean_logs = sums.into_iter().map(|s| s / n).collect();

        let grid_logs = (0..refs.len())
            .map(|i| {
                let vertex = SimplexWeights::vertex(refs.len(), i).expect("index in range");
                weighted_log_values(refs, &vertex, g)
            })
            .collect();
        let log_weights = (0..g.len()).map(|j| g.weight(j).ln()).collect();
        Ok(Self { target_mean_logs, grid_logs, log_weights })
    }

    pub fn k(&self) -> usize {
        self.target_mean_logs.len()
    }

    /// Unnormalized log barycenter mass at each node, trapezoid weight included.
    fn log_mass(&self, w: &SimplexWeights) -> Vec<f64> {
        let lambda = w.as_slice();
        self.log_weights
            .iter()
            .enumerate()
            .map(|(j, lw)| {
                lw + lambda.iter().zip(&self.grid_logs).filter(|(&l, _)| l != 0.0).map(|(l, row)| l * row[j]).sum::<f64>()
            })
            .collect()
    }

    fn log_sum_exp(v: &[f64]) -> f64 {
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
    }

    pub fn log_partition(&self, w: &SimplexWeights) -> f64 {
        Self::log_sum_exp(&self.log_mass(w))
    }

    pub fn objective(&self, w: &SimplexWeights) -> f64 {
        let linear: f64 = w.as_slice().iter().zip(&self.target_mean_logs).map(|(l, m)| l * m).sum();
        -linear + self.log_partition(w)
    }

    /// `∂F/∂λ_i = −E_ν[log p_i] + E_{p_λ}[log p_i]`.
    pub fn gradient(&self, w: &SimplexWeights) -> Vec<f64> {
        let log_mass = self.log_mass(w);
        let log_z = Self::log_sum_exp(&log_mass);
        let probs: Vec<f64> = log_mass.iter().map(|l| (l - log_z).exp()).collect();
        self.target_mean_logs
            .iter()
            .zip(&self.grid_logs)
            .map(|(m, row)| {
                let e: f64 = probs.iter().zip(row).filter(|(&p, _)| p > 0.0).map(|(p, l)| p * l).sum();
                -m + e
            })
            .collect()
    }
}

pub fn vf_objective(w: &SimplexWeights, target: &SampleSet, refs: &[&dyn LogDensity], g: &Grid) -> Result<f64> {
    let p = VanillaProblem::new(target, refs, g)?;
    check_k(&p, w)?;
    Ok(p.objective(w))
}

pub fn vf_gradient(w: &SimplexWeights, target: &SampleSet, refs: &[&dyn LogDensity], g: &Grid) -> Result<Vec<f64>> {
    let p = VanillaProblem::new(target, refs, g)?;
    check_k(&p, w)?;
    Ok(p.gradient(w))
}

fn check_k(p: &VanillaProblem, w: &SimplexWeights) -> Result<()> {
    if p.k() != w.k() {
        return Err(Error::InvalidInput(format!("{} weights for {} references", w.k(), p.k())));
    }
    Ok(())
}

/// Iterates, objective values and Frank-Wolfe gaps `⟨∇F(x), x − v⟩`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrankWolfeTrace {
    pub iterates: Vec<SimplexWeights>,
    pub objective: Vec<f64>,
    pub gap: Vec<f64>,
    /// Iteration at which a non-finite gradient stopped the run.
    pub aborted_at: Option<usize>,
}

impl FrankWolfeTrace {
    pub fn last(&self) -> &SimplexWeights {
        self.iterates.last().expect("trace holds the starting point")
    }

    /// CSV `tau,objective,gap` (`tau` counts from 1).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "tau,objective,gap")?;
        for (i, (f, g)) in self.objective.iter().zip(&self.gap).enumerate() {
            writeln!(out, "{},{f:?},{g:?}", i + 1)?;
        }
        Ok(())
    }
}

/// Step size of iteration `tau` (counted from 1): `1` first, then `2 / (τ + 3)`.
pub fn fw_step_size(tau: usize) -> f64 {
    if tau <= 1 {
        1.0
    } else {
        2.0 / (tau as f64 + 3.0)
    }
}

/// Frank-Wolfe over `Δ_k` with the function-agnostic step schedule.
///
/// Runs `tau_max` updates `x_{τ+1} = x_τ + γ_τ (v_τ − x_τ)` where `v_τ` is the
/// vertex minimizing `⟨∇F(x_τ), v⟩` (ties go to the lowest index).
pub fn frank_wolfe<F, G>(objective: F, gradient: G, w0: SimplexWeights, tau_max: usize) -> Result<FrankWolfeTrace>
where
    F: Fn(&SimplexWeights) -> f64,
    G: Fn(&SimplexWeights) -> Vec<f64>,
{
    if tau_max == 0 {
        return Err(Error::InvalidInput("tau_max must be at least 1".into()));
    }
    let k = w0.k();
    let mut trace = FrankWolfeTrace { iterates: vec![], objective: vec![], gap: vec![], aborted_at: None };
    let mut x = w0;
    for tau in 1..=tau_max + 1 {
        let grad = gradient(&x);
        if grad.len() != k {
            return Err(Error::InvalidInput(format!("gradient has {} entries, expected {k}", grad.len())));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            trace.aborted_at = Some(tau);
            trace.iterates.push(x);
            return Ok(trace);
        }
        let best = grad
            .iter()
            .enumerate()
            .fold(0, |best, (i, g)| if *g < grad[best] { i } else { best });
        let gap = grad.iter().zip(x.as_slice()).map(|(g, xi)| g * xi).sum::<f64>() - grad[best];
        trace.objective.push(objective(&x));
        trace.gap.push(gap);
        if tau == tau_max + 1 {
            trace.iterates.push(x);
            break;
        }
        let v = SimplexWeights::vertex(k, best)?;
        let next = x.step_towards(&v, fw_step_size(tau))?;
        trace.iterates.push(x);
        x = next;
    }
    Ok(trace)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VanillaFit {
    pub weights: SimplexWeights,
    pub trace: FrankWolfeTrace,
}

/// Quadrature grid covering every reference's components at ± 8 std.
pub fn covering_grid(refs: &[GaussianMixture], n_points: usize) -> Result<Grid> {
    let boxes: Vec<Vec<(f64, f64)>> = refs.iter().map(|r| r.covering_box(8.0)).collect();
    Grid::covering(&boxes, n_points)
}

/// Learns λ* by Frank-Wolfe on the vanilla objective, using the exact
/// mixture log-densities of the references. Starts from the uniform weights.
pub fn run_vanilla_fusion(target: &SampleSet, refs: &[GaussianMixture], g: &Grid, tau_max: usize) -> Result<VanillaFit> {
    let dyn_refs: Vec<&dyn LogDensity> = refs.iter().map(|r| r as &dyn LogDensity).collect();
    let problem = VanillaProblem::new(target, &dyn_refs, g)?;
    let trace = frank_wolfe(
        |w| problem.objective(w),
        |w| problem.gradient(w),
        SimplexWeights::uniform(refs.len())?,
        tau_max,
    )?;
    if let Some(tau) = trace.aborted_at {
        return Err(Error::NonFiniteGradient { iteration: tau });
    }
    Ok(VanillaFit { weights: trace.last().clone(), trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn step_schedule() {
        assert_eq!(fw_step_size(1), 1.0);
        assert_eq!(fw_step_size(2), 0.4);
        assert_eq!(fw_step_size(7), 0.2);
    }

    #[test]
    fn quadratic_interior_minimizer() {
        let c = [0.3, 0.7];
        let f = |w: &SimplexWeights| w.as_slice().iter().zip(&c).map(|(x, c)| (x - c).powi(2)).sum::<f64>();
        let g = |w: &SimplexWeights| w.as_slice().iter().zip(&c).map(|(x, c)| 2.0 * (x - c)).collect();
        let trace = frank_wolfe(f, g, SimplexWeights::uniform(2).unwrap(), 500).unwrap();
        assert_eq!(trace.iterates.len(), 501);
        assert!(trace.last().linf_distance(&SimplexWeights::new(c.to_vec()).unwrap()) < 0.02);
        // first update jumps to a vertex, second moves 2/5 of the way back
        assert_eq!(trace.iterates[1].as_slice(), &[0.0, 1.0]);
        assert!((trace.iterates[2].as_slice()[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn vertex_minimizer_is_reached_in_one_step() {
        let f = |w: &SimplexWeights| (w.as_slice()[0] - 1.0).powi(2) + w.as_slice()[1].powi(2);
        let g = |w: &SimplexWeights| vec![2.0 * (w.as_slice()[0] - 1.0), 2.0 * w.as_slice()[1]];
        let trace = frank_wolfe(f, g, SimplexWeights::uniform(2).unwrap(), 20).unwrap();
        assert!(trace.iterates[1..].iter().all(|x| x.as_slice() == [1.0, 0.0]));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let trace = frank_wolfe(|_| 0.0, |_| vec![1.0, 1.0, 1.0], SimplexWeights::uniform(3).unwrap(), 1).unwrap();
        assert_eq!(trace.iterates[1].as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn aborts_on_non_finite_gradient() {
        let g = |w: &SimplexWeights| if w.as_slice()[0] == 1.0 { vec![f64::NAN, 0.0] } else { vec![-1.0, 0.0] };
        let trace = frank_wolfe(|_| 0.0, g, SimplexWeights::uniform(2).unwrap(), 10).unwrap();
        assert_eq!(trace.aborted_at, Some(2));
        assert_eq!(trace.iterates.len(), 2);
        assert!(frank_wolfe(|_| 0.0, g, SimplexWeights::uniform(2).unwrap(), 0).is_err());
    }

    #[test]
    fn single_reference_objective_is_negative_log_likelihood() {
        let p = GaussianMixture::univariate(&[(0.5, -1.0, 0.7), (0.5, 1.5, 1.0)]).unwrap();
        let target = p.sample(500, &mut rng::stream(1)).unwrap();
        let g = covering_grid(&[p.clone()], 4001).unwrap();
        let w = SimplexWeights::vertex(1, 0).unwrap();
        let f = vf_objective(&w, &target, &[&p], &g).unwrap();
        let nll = -target.rows().map(|x| p.log_density(x).unwrap()).sum::<f64>() / 500.0;
        assert!((f - nll).abs() < 1e-8);
    }

    #[test]
    fn likelihood_dominance() {
        let p1 = GaussianMixture::univariate(&[(1.0, 0.0, 1.0)]).unwrap();
        let p2 = GaussianMixture::univariate(&[(1.0, 12.0, 1.0)]).unwrap();
        let target = p1.sample(1000, &mut rng::stream(8)).unwrap();
        let g = covering_grid(&[p1.clone(), p2.clone()], 2001).unwrap();
        let refs: [&dyn LogDensity; 2] = [&p1, &p2];
        let f1 = vf_objective(&SimplexWeights::vertex(2, 0).unwrap(), &target, &refs, &g).unwrap();
        let f2 = vf_objective(&SimplexWeights::vertex(2, 1).unwrap(), &target, &refs, &g).unwrap();
        assert!(f1 < f2);
    }

    #[test]
    fn symmetric_gradient() {
        let p1 = GaussianMixture::univariate(&[(0.5, -3.0, 1.0), (0.5, 1.0, 0.5)]).unwrap();
        let p2 = GaussianMixture::univariate(&[(0.5, 3.0, 1.0), (0.5, -1.0, 0.5)]).unwrap();
        let target = SampleSet::new(1, vec![-2.0, -0.5, 0.5, 2.0], "sym", None).unwrap();
        let g = Grid::uniform_1d(-12.0, 12.0, 4001).unwrap();
        let grad = vf_gradient(&SimplexWeights::uniform(2).unwrap(), &target, &[&p1, &p2], &g).unwrap();
        assert!((grad[0] - grad[1]).abs() < 1e-8);
    }

    #[test]
    fn identical_references_give_flat_objective() {
        let p = GaussianMixture::univariate(&[(0.4, -2.0, 1.0), (0.6, 2.0, 0.5)]).unwrap();
        let target = p.sample(200, &mut rng::stream(3)).unwrap();
        let g = covering_grid(&[p.clone()], 4001).unwrap();
        let problem = VanillaProblem::new(&target, &[&p, &p], &g).unwrap();
        let values: Vec<f64> = SimplexWeights::lattice(2, 100).iter().map(|w| problem.objective(w)).collect();
        let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - values.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 1e-10);
        let fit = run_vanilla_fusion(&target, &[p.clone(), p], &g, 50).unwrap();
        assert_eq!(fit.weights.k(), 2);
    }

    #[test]
    fn flags_samples_outside_support() {
        struct Bounded;
        impl LogDensity for Bounded {
            fn dim(&self) -> usize {
                1
            }
            fn log_density_at(&self, x: &[f64]) -> f64 {
                if x[0].abs() <= 1.0 { -(2f64.ln()) } else { f64::NEG_INFINITY }
            }
        }
        let target = SampleSet::new(1, vec![0.0, 3.0, -0.5, -4.0], "t", None).unwrap();
        let g = Grid::uniform_1d(-1.0, 1.0, 101).unwrap();
        let err = VanillaProblem::new(&target, &[&Bounded], &g).unwrap_err();
        assert!(matches!(err, Error::UnsupportedSamples { ref indices } if indices == &[1, 3]));
    }
}
