#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scorefusion::{Component, GaussianMixture, SimplexWeights};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixture with `k` components, means in [-3, 3], variances in [0.3, 2].
pub fn random_mixture(r: &mut impl Rng, dim: usize, k: usize) -> GaussianMixture {
    let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let comps = raw
        .iter()
        .map(|w| Component {
            weight: w / total,
            mean: (0..dim).map(|_| r.random_range(-3.0..3.0)).collect(),
            var: (0..dim).map(|_| r.random_range(0.3..2.0)).collect(),
        })
        .collect();
    GaussianMixture::new(dim, comps).unwrap()
}

pub fn random_simplex(r: &mut impl Rng, k: usize) -> SimplexWeights {
    let e: Vec<f64> = (0..k).map(|_| -r.random_range(1e-12f64..1.0).ln()).collect();
    let s: f64 = e.iter().sum();
    SimplexWeights::from_raw(e.iter().map(|v| v / s).collect()).unwrap()
}

/// All points of Δ₂ with spacing `step`, as (λ₁, 1 − λ₁).
pub fn delta2_grid(step: f64) -> Vec<[f64; 2]> {
    let n = (1.0 / step).round() as usize;
    (0..=n).map(|i| i as f64 / n as f64).map(|l| [l, 1.0 - l]).collect()
}

/// All points of Δ₃ with spacing `step`.
pub fn delta3_grid(step: f64) -> Vec<[f64; 3]> {
    let n = (1.0 / step).round() as usize;
    let mut out = Vec::new();
    for i in 0..=n {
        for j in 0..=(n - i) {
            let (a, b) = (i as f64 / n as f64, j as f64 / n as f64);
            out.push([a, b, (1.0 - a - b).max(0.0)]);
        }
    }
    out
}

pub fn argmin_by<T: Copy>(pts: &[T], f: impl Fn(&T) -> f64) -> T {
    let mut best = pts[0];
    let mut fb = f(&best);
    for p in &pts[1..] {
        let v = f(p);
        if v < fb {
            best = *p;
            fb = v;
        }
    }
    best
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Relative error with an absolute floor on the denominator.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// CDF of a 1-D mixture.
pub fn mixture_cdf(m: &GaussianMixture, x: f64) -> f64 {
    m.components().iter().map(|c| c.weight * normal_cdf((x - c.mean[0]) / c.var[0].sqrt())).sum()
}

/// The two bimodal references of the canonical experiment.
pub fn canonical_refs() -> (GaussianMixture, GaussianMixture) {
    (
        GaussianMixture::univariate(&[(0.5, -4.0, 1.0), (0.5, 4.0, 1.0)]).unwrap(),
        GaussianMixture::univariate(&[(0.5, -2.0, 0.5), (0.5, 2.0, 0.5)]).unwrap(),
    )
}

/// Runs `f` on a dedicated pool with `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}
