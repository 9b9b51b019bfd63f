//! ScoreFusion: learn simplex weights `λ` by regressing the λ-weighted
//! auxiliary scores onto the target's score along the forward diffusion,
//!
//! `L(λ) = E_{t ~ U[t_min, T̃]} γ(t) E ‖Σ λ_i s_i(t, X_t) − ∇ log p_t(X_t)‖²`,
//!
//! with the intractable target score replaced by the transition-kernel
//! (denoising) score. The loss is an exact quadratic `λᵀAλ − 2bᵀλ + c`, so it
//! can be assembled once from Monte-Carlo draws and minimized over the
//! simplex in closed form; the softmax-SGD route is kept alongside it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::field::{FieldHandle, ScoreField};
use crate::ou::transition_unchecked;
use crate::rng;
use crate::samples::SampleSet;
use crate::schedule::OuSchedule;
use crate::simplex::SimplexWeights;

/// Monte-Carlo pairs are drawn and reduced in fixed chunks of this size, so
/// the assembled quadratic does not depend on the worker count.
const CHUNK: usize = 4096;

/// Largest `k` solved by active-set enumeration.
const MAX_ENUMERATED_K: usize = 6;

/// Time weighting `γ(t)` of the score-matching loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    /// `γ(t) = var_t`, the forward transition variance.
    SigmaSquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionTrainConfig {
    pub t_tilde: f64,
    pub t_min: f64,
    #[serde(default)]
    pub weighting: Weighting,
    pub n_mc: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl FusionTrainConfig {
    /// `T̃ = 0.05 T`, `t_min = 1e-3 T`, `10⁵` Monte-Carlo pairs.
    pub fn for_schedule(s: &OuSchedule) -> Self {
        Self {
            t_tilde: 0.05 * s.horizon(),
            t_min: 1e-3 * s.horizon(),
            weighting: Weighting::Uniform,
            n_mc: 100_000,
            batch_size: 1000,
            learning_rate: 0.1,
            max_epochs: 200,
            seed: 0,
        }
    }

    pub fn validate(&self, s: &OuSchedule) -> Result<()> {
        if !(0.0 < self.t_min && self.t_min < self.t_tilde && self.t_tilde <= s.horizon()) {
            return Err(Error::InvalidInput(format!(
                "need 0 < t_min < t_tilde <= T, got t_min = {}, t_tilde = {}, T = {}",
                self.t_min,
                self.t_tilde,
                s.horizon()
            )));
        }
        if self.n_mc == 0 {
            return Err(Error::InvalidInput("n_mc must be positive".into()));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidInput("SGD needs a positive batch size and learning rate".into()));
        }
        Ok(())
    }

    fn gamma(&self, var_t: f64) -> f64 {
        match self.weighting {
            Weighting::Uniform => 1.0,
            Weighting::SigmaSquared => var_t,
        }
    }
}

/// Regression target for the auxiliary scores.
#[derive(Clone, Copy)]
pub enum TargetScore<'a> {
    /// `−(x_t − e^{−at} x0) / var_t`.
    Denoising,
    /// A known exact score of the target's diffused law.
    Exact(&'a dyn ScoreField),
}

/// Monte-Carlo draws with the auxiliary scores evaluated on them.
#[derive(Debug, Clone)]
pub struct FusionDraws {
    pub k: usize,
    pub dim: usize,
    pub times: Vec<f64>,
    /// `n × d`, row-major.
    pub states: Vec<f64>,
    /// `n × k × d`: `scores[(p k + i) d + j]` is coordinate `j` of `s_i(t_p, x_p)`.
    pub scores: Vec<f64>,
    /// `n × d` regression targets.
    pub targets: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl FusionDraws {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, p: usize) -> &[f64] {
        &self.states[p * self.dim..(p + 1) * self.dim]
    }

    pub fn target(&self, p: usize) -> &[f64] {
        &self.targets[p * self.dim..(p + 1) * self.dim]
    }

    fn score(&self, p: usize, i: usize) -> &[f64] {
        let start = (p * self.k + i) * self.dim;
        &self.scores[start..start + self.dim]
    }

    /// Adds pair `p`'s contribution to `A`, `b`, `c`.
    fn accumulate(&self, p: usize, a: &mut [f64], b: &mut [f64], c: &mut f64) {
        let g = self.gammas[p];
        let target = self.target(p);
        for i in 0..self.k {
            let si = self.score(p, i);
            for j in i..self.k {
                let v = g * dot(si, self.score(p, j));
                a[i * self.k + j] += v;
            }
            b[i] += g * dot(si, target);
        }
        *c += g * dot(target, target);
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn check_inputs(aux: &[FieldHandle], data: &SampleSet, s: &OuSchedule, cfg: &FusionTrainConfig) -> Result<usize> {
    cfg.validate(s)?;
    let first = aux.first().ok_or_else(|| Error::InvalidInput("no auxiliary score fields".into()))?;
    for f in aux {
        check_dim(first.dim(), f.dim())?;
    }
    check_dim(first.dim(), data.dim())?;
    if data.is_empty() {
        return Err(Error::InvalidInput("empty training data".into()));
    }
    Ok(first.dim())
}

/// Draws `cfg.n_mc` pairs: `x0` uniformly from `data` (with replacement),
/// `t ~ U[t_min, T̃]`, `x_t` from the forward kernel. Pair `p` uses substream
/// `(cfg.seed, p)`.
pub fn draw_pairs(
    aux: &[FieldHandle],
    data: &SampleSet,
    s: &OuSchedule,
    cfg: &FusionTrainConfig,
    target: TargetScore<'_>,
) -> Result<FusionDraws> {
    let dim = check_inputs(aux, data, s, cfg)?;
    if let TargetScore::Exact(f) = target {
        check_dim(dim, f.dim())?;
    }
    let k = aux.len();
    let n = cfg.n_mc;
    let chunks: Vec<FusionDraws> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let range = c * CHUNK..((c + 1) * CHUNK).min(n);
            let m = range.len();
            let mut out = FusionDraws {
                k,
                dim,
                times: Vec::with_capacity(m),
                states: Vec::with_capacity(m * dim),
                scores: vec![0.0; m * k * dim],
                targets: Vec::with_capacity(m * dim),
                gammas: Vec::with_capacity(m),
            };
            let mut z = vec![0.0; dim];
            for (local, p) in range.enumerate() {
                let mut r = rng::substream(cfg.seed, p as u64);
                let x0 = data.row(r.random_range(0..data.len()));
                let t = r.random_range(cfg.t_min..cfg.t_tilde);
                let tp = transition_unchecked(s, t);
                let sd = tp.var_t.sqrt();
                z.iter_mut().for_each(|v| *v = r.sample(StandardNormal));
                let x_t: Vec<f64> = x0.iter().zip(&z).map(|(x, z)| tp.decay * x + sd * z).collect();
                match target {
                    TargetScore::Denoising => out.targets.extend(z.iter().map(|z| -z / sd)),
                    TargetScore::Exact(f) => {
                        let mut buf = vec![0.0; dim];
                        f.evaluate_into(t, &x_t, &mut buf);
                        out.targets.extend(buf);
                    }
                }
                for (i, f) in aux.iter().enumerate() {
                    let start = (local * k + i) * dim;
                    f.evaluate_into(t, &x_t, &mut out.scores[start..start + dim]);
                }
                out.states.extend(&x_t);
                out.times.push(t);
                out.gammas.push(cfg.gamma(tp.var_t));
            }
            out
        })
        .collect();

    let mut all = FusionDraws {
        k,
        dim,
        times: Vec::with_capacity(n),
        states: Vec::with_capacity(n * dim),
        scores: Vec::with_capacity(n * k * dim),
        targets: Vec::with_capacity(n * dim),
        gammas: Vec::with_capacity(n),
    };
    for c in chunks {
        all.times.extend(c.times);
        all.states.extend(c.states);
        all.scores.extend(c.scores);
        all.targets.extend(c.targets);
        all.gammas.extend(c.gammas);
    }
    Ok(all)
}

/// `L(λ) = λᵀAλ − 2bᵀλ + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionQuadratic {
    pub k: usize,
    /// Row-major `k × k`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
    pub n_mc: usize,
}

impl FusionQuadratic {
    /// Validates symmetry and positive semidefiniteness.
    pub fn new(k: usize, a: Vec<f64>, b: Vec<f64>, c: f64, n_mc: usize) -> Result<Self> {
        if k == 0 || a.len() != k * k || b.len() != k {
            return Err(Error::InvalidInput(format!("quadratic shapes do not match k = {k}")));
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) || !c.is_finite() {
            return Err(Error::InvalidInput("quadratic has non-finite entries".into()));
        }
        let q = Self { k, a, b, c, n_mc };
        let scale = q.a.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
        for i in 0..k {
            for j in 0..i {
                if (q.a[i * k + j] - q.a[j * k + i]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidInput("A is not symmetric".into()));
                }
            }
        }
        let min_eig = q.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 * scale {
            return Err(Error::InvalidInput(format!("A is not positive semidefinite (eigenvalue {min_eig})")));
        }
        Ok(q)
    }

    /// Reduces draws in fixed chunk order.
    pub fn from_draws(d: &FusionDraws) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::InvalidInput("no Monte-Carlo draws".into()));
        }
        let k = d.k;
        let partials: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..d.len().div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let (mut a, mut b, mut cc) = (vec![0.0; k * k], vec![0.0; k], 0.0);
                for p in c * CHUNK..((c + 1) * CHUNK).min(d.len()) {
                    d.accumulate(p, &mut a, &mut b, &mut cc);
                }
                (a, b, cc)
            })
            .collect();
        let (mut a, mut b, mut c) = (vec![0.0; k * k], vec![0.0; k], 0.0);
        for (pa, pb, pc) in partials {
            a.iter_mut().zip(pa).for_each(|(x, y)| *x += y);
            b.iter_mut().zip(pb).for_each(|(x, y)| *x += y);
            c += pc;
        }
        let n = d.len() as f64;
        for i in 0..k {
            for j in i..k {
                a[i * k + j] /= n;
                a[j * k + i] = a[i * k + j];
            }
        }
        b.iter_mut().for_each(|v| *v /= n);
        Self::new(k, a, b, c / n, d.len())
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.k, self.k, &self.a)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        SymmetricEigen::new(self.matrix()).eigenvalues.iter().cloned().collect()
    }

    /// `λᵀAλ − 2bᵀλ` (without the constant).
    pub fn reduced_loss(&self, lambda: &[f64]) -> f64 {
        let k = self.k;
        let mut quad = 0.0;
        for i in 0..k {
            for j in 0..k {
                quad += lambda[i] * self.a[i * k + j] * lambda[j];
            }
        }
        quad - 2.0 * dot(&self.b, lambda)
    }

    pub fn loss(&self, lambda: &[f64]) -> f64 {
        self.reduced_loss(lambda) + self.c
    }

    /// `∇_λ L = 2(Aλ − b)`.
    pub fn gradient(&self, lambda: &[f64]) -> Vec<f64> {
        (0..self.k).map(|i| 2.0 * (dot(&self.a[i * self.k..(i + 1) * self.k], lambda) - self.b[i])).collect()
    }
}

pub fn assemble_quadratic(aux: &[FieldHandle], data: &SampleSet, s: &OuSchedule, cfg: &FusionTrainConfig) -> Result<FusionQuadratic> {
    FusionQuadratic::from_draws(&draw_pairs(aux, data, s, cfg, TargetScore::Denoising)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub weights: SimplexWeights,
    /// `λᵀAλ − 2bᵀλ` at the solution.
    pub loss: f64,
    /// A face system was singular and solved with `A + 1e-10 I`.
    pub regularized: bool,
}

/// Minimizes `λᵀAλ − 2bᵀλ` over `Δ_k`.
///
/// For `k ≤ 6` every face is visited: the equality-constrained KKT system
/// `[2A_S 1; 1ᵀ 0][λ; μ] = [2b_S; 1]` is solved and feasible stationary points
/// compete on loss (ties: lexicographically smallest λ). Larger `k` uses
/// projected gradient descent.
pub fn solve_simplex_quadratic(q: &FusionQuadratic) -> Result<QpSolution> {
    if q.k <= MAX_ENUMERATED_K {
        solve_by_enumeration(q)
    } else {
        solve_by_projection(q)
    }
}

fn solve_face(q: &FusionQuadratic, face: &[usize], ridge: f64) -> Option<Vec<f64>> {
    let m = face.len();
    let mut kkt = DMatrix::<f64>::zeros(m + 1, m + 1);
    let mut rhs = DVector::<f64>::zeros(m + 1);
    for (r, &i) in face.iter().enumerate() {
        for (c, &j) in face.iter().enumerate() {
            kkt[(r, c)] = 2.0 * q.a[i * q.k + j] + if r == c { 2.0 * ridge } else { 0.0 };
        }
        kkt[(r, m)] = 1.0;
        kkt[(m, r)] = 1.0;
        rhs[r] = 2.0 * q.b[i];
    }
    rhs[m] = 1.0;
    let sol = kkt.full_piv_lu().solve(&rhs)?;
    let lambda: Vec<f64> = sol.iter().take(m).cloned().collect();
    lambda.iter().all(|v| v.is_finite()).then_some(lambda)
}

fn solve_by_enumeration(q: &FusionQuadratic) -> Result<QpSolution> {
    let k = q.k;
    let mut best: Option<(f64, Vec<f64>, bool)> = None;
    for mask in 1u32..(1 << k) {
        let face: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let (sol, regularized) = match solve_face(q, &face, 0.0) {
            Some(s) => (s, false),
            None => match solve_face(q, &face, 1e-10) {
                Some(s) => (s, true),
                None => continue,
            },
        };
        if sol.iter().any(|&v| v < -1e-12) {
            continue;
        }
        let mut lambda = vec![0.0; k];
        for (&i, v) in face.iter().zip(&sol) {
            lambda[i] = v.max(0.0);
        }
        let sum: f64 = lambda.iter().sum();
        lambda.iter_mut().for_each(|v| *v /= sum);
        let loss = q.reduced_loss(&lambda);
        let better = match &best {
            None => true,
            Some((bl, bx, _)) => {
                let tol = 1e-12 * (1.0 + bl.abs());
                loss < bl - tol || ((loss - bl).abs() <= tol && lambda.partial_cmp(bx) == Some(std::cmp::Ordering::Less))
            }
        };
        if better {
            best = Some((loss, lambda, regularized));
        }
    }
    let (loss, lambda, regularized) = best.ok_or_else(|| Error::InvalidInput("no feasible face".into()))?;
    Ok(QpSolution { weights: SimplexWeights::from_raw(lambda)?, loss, regularized })
}

fn solve_by_projection(q: &FusionQuadratic) -> Result<QpSolution> {
    let lipschitz = 2.0 * q.eigenvalues().into_iter().fold(0.0, f64::max);
    if lipschitz <= 0.0 {
        let w = SimplexWeights::uniform(q.k)?;
        let loss = q.reduced_loss(w.as_slice());
        return Ok(QpSolution { weights: w, loss, regularized: false });
    }
    let step = 1.0 / lipschitz;
    let mut x = SimplexWeights::uniform(q.k)?;
    for _ in 0..200_000 {
        let g = q.gradient(x.as_slice());
        let y: Vec<f64> = x.as_slice().iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
        let next = SimplexWeights::project(&y)?;
        let moved = next.linf_distance(&x);
        x = next;
        if moved < 1e-14 {
            break;
        }
    }
    let loss = q.reduced_loss(x.as_slice());
    Ok(QpSolution { weights: x, loss, regularized: false })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SgdFit {
    pub weights: SimplexWeights,
    pub logits: Vec<f64>,
    /// Full-sample loss `L(λ)` after each epoch.
    pub loss_curve: Vec<f64>,
}

/// Softmax-parameterized minibatch descent on the score-matching loss.
///
/// `λ = softmax(θ)` with `θ_i ~ N(0, 0.01)`. Each epoch shuffles the
/// Monte-Carlo pairs into minibatches; the minibatch gradient `2(A_B λ − b_B)`
/// is pulled back through the softmax Jacobian `diag(λ) − λλᵀ`. Stops when the
/// epoch loss changes by less than `1e-6` relatively, or after `max_epochs`.
pub fn sgd_train(aux: &[FieldHandle], data: &SampleSet, s: &OuSchedule, cfg: &FusionTrainConfig) -> Result<SgdFit> {
    let draws = draw_pairs(aux, data, s, cfg, TargetScore::Denoising)?;
    sgd_on_draws(&draws, cfg)
}

pub fn sgd_on_draws(draws: &FusionDraws, cfg: &FusionTrainConfig) -> Result<SgdFit> {
    let k = draws.k;
    let full = FusionQuadratic::from_draws(draws)?;
    let mut init = rng::substream(rng::derive_seed(cfg.seed, 0x5344), 0);
    let normal = Normal::new(0.0, 0.1).expect("valid normal");
    let mut theta: Vec<f64> = (0..k).map(|_| init.sample(normal)).collect();
    let mut order: Vec<usize> = (0..draws.len()).collect();
    let mut curve = Vec::new();
    let mut prev: Option<f64> = None;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng::substream(rng::derive_seed(cfg.seed, 0x5345), epoch as u64));
        for batch in order.chunks(cfg.batch_size) {
            let lambda = SimplexWeights::softmax(&theta)?;
            let l = lambda.as_slice();
            let (mut a, mut b, mut c) = (vec![0.0; k * k], vec![0.0; k], 0.0);
            for &p in batch {
                draws.accumulate(p, &mut a, &mut b, &mut c);
            }
            let m = batch.len() as f64;
            for i in 0..k {
                for j in 0..i {
                    a[i * k + j] = a[j * k + i];
                }
            }
            let grad_lambda: Vec<f64> = (0..k).map(|i| 2.0 * (dot(&a[i * k..(i + 1) * k], l) - b[i]) / m).collect();
            let inner = dot(l, &grad_lambda);
            for i in 0..k {
                theta[i] -= cfg.learning_rate * l[i] * (grad_lambda[i] - inner);
            }
        }
        let loss = full.loss(SimplexWeights::softmax(&theta)?.as_slice());
        curve.push(loss);
        if !loss.is_finite() || theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::TrainingDiverged { epoch, curve });
        }
        if let Some(p) = prev {
            if (loss - p).abs() <= 1e-6 * p.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        }
        prev = Some(loss);
    }
    Ok(SgdFit { weights: SimplexWeights::softmax(&theta)?, logits: theta, loss_curve: curve })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DsmCheck {
    pub lambda_dsm: SimplexWeights,
    pub lambda_exact: SimplexWeights,
    pub gap: f64,
}

/// Minimizers of the denoising and the exact-score quadratics, assembled on
/// the same Monte-Carlo draws, and their ℓ∞ gap.
pub fn oracle_vs_dsm_check(
    aux: &[FieldHandle],
    exact_target: &dyn ScoreField,
    data: &SampleSet,
    s: &OuSchedule,
    cfg: &FusionTrainConfig,
) -> Result<DsmCheck> {
    let dsm = FusionQuadratic::from_draws(&draw_pairs(aux, data, s, cfg, TargetScore::Denoising)?)?;
    let exact = FusionQuadratic::from_draws(&draw_pairs(aux, data, s, cfg, TargetScore::Exact(exact_target))?)?;
    let lambda_dsm = solve_simplex_quadratic(&dsm)?.weights;
    let lambda_exact = solve_simplex_quadratic(&exact)?.weights;
    let gap = lambda_dsm.linf_distance(&lambda_exact);
    Ok(DsmCheck { lambda_dsm, lambda_exact, gap })
}

/// Learned weights together with the quadratic they minimize, for audit and replay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionRecord {
    pub quadratic: FusionQuadratic,
    pub weights: SimplexWeights,
    pub loss: f64,
    pub regularized: bool,
    pub config: FusionTrainConfig,
}

/// Default ScoreFusion training path: assemble the quadratic, solve it exactly.
pub fn fit_score_fusion(aux: &[FieldHandle], data: &SampleSet, s: &OuSchedule, cfg: &FusionTrainConfig) -> Result<FusionRecord> {
    let quadratic = assemble_quadratic(aux, data, s, cfg)?;
    let sol = solve_simplex_quadratic(&quadratic)?;
    Ok(FusionRecord { weights: sol.weights, loss: sol.loss + quadratic.c, regularized: sol.regularized, quadratic, config: *cfg })
}
