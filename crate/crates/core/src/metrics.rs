//! Evaluation metrics: exact 1-D Wasserstein-1 between empirical samples,
//! grid KL and total variation, and fixed-width histograms.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::samples::SampleSet;

/// Densities below this are treated as zero in the KL support check.
pub const KL_SUPPORT_THRESHOLD: f64 = 1e-300;

fn sorted_1d(s: &SampleSet) -> Result<Vec<f64>> {
    let v = s.values_1d()?;
    if v.is_empty() {
        return Err(Error::InvalidInput("empty sample set".into()));
    }
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidInput("sample set contains NaN".into()));
    }
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// `∫_0^1 |F_a^{-1}(u) - F_b^{-1}(u)| du` for the two empirical laws.
///
/// The quantile functions are step functions with breakpoints at `i/n` and
/// `j/m`; breakpoints are merged with integer comparisons so unequal sizes
/// are handled exactly.
pub fn wasserstein1_1d(a: &SampleSet, b: &SampleSet) -> Result<f64> {
    let (xa, xb) = (sorted_1d(a)?, sorted_1d(b)?);
    Ok(wasserstein1_sorted(&xa, &xb))
}

/// Same as [`wasserstein1_1d`] on already sorted, non-empty slices.
pub fn wasserstein1_sorted(xa: &[f64], xb: &[f64]) -> f64 {
    let (n, m) = (xa.len() as u128, xb.len() as u128);
    if n == m {
        return xa.iter().zip(xb).map(|(x, y)| (x - y).abs()).sum::<f64>() / xa.len() as f64;
    }
    // Quantile level u is tracked as an integer multiple of 1/(n m).
    let (mut i, mut j) = (0usize, 0usize);
    let (mut prev, mut total) = (0u128, 0.0);
    while i < xa.len() && j < xb.len() {
        let next_a = (i as u128 + 1) * m;
        let next_b = (j as u128 + 1) * n;
        let next = next_a.min(next_b);
        total += (next - prev) as f64 * (xa[i] - xb[j]).abs();
        prev = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    total / (n * m) as f64
}

/// `∫ p log(p / q)` by the trapezoid rule, with `0 log 0 = 0`. Returns
/// `f64::INFINITY` when `p` has mass where `q` vanishes.
pub fn kl_grid(p: &[f64], q: &[f64], g: &Grid) -> Result<f64> {
    check_lengths(p, q, g)?;
    let mut terms = Vec::with_capacity(p.len());
    for (&pi, &qi) in p.iter().zip(q) {
        if pi <= KL_SUPPORT_THRESHOLD {
            terms.push(0.0);
        } else if qi <= KL_SUPPORT_THRESHOLD {
            return Ok(f64::INFINITY);
        } else {
            terms.push(pi * (pi.ln() - qi.ln()));
        }
    }
    Ok(g.integrate(&terms))
}

/// `½ ∫ |p − q|` by the trapezoid rule.
pub fn tv_grid(p: &[f64], q: &[f64], g: &Grid) -> Result<f64> {
    check_lengths(p, q, g)?;
    let diff: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a - b).abs()).collect();
    Ok(0.5 * g.integrate(&diff))
}

fn check_lengths(p: &[f64], q: &[f64], g: &Grid) -> Result<()> {
    if p.len() != g.len() || q.len() != g.len() {
        return Err(Error::InvalidInput(format!(
            "density vectors of length {} and {} on a grid of {} nodes",
            p.len(),
            q.len(),
            g.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Fixed-width binning of a 1-D set over `[lo, hi]`. Bins are half-open
/// except the last, which includes `hi`; out-of-range samples are dropped.
pub fn histogram(a: &SampleSet, bins: usize, range: (f64, f64)) -> Result<Histogram> {
    let (lo, hi) = range;
    if bins == 0 || !(lo < hi) {
        return Err(Error::InvalidInput(format!("invalid histogram: {bins} bins over [{lo}, {hi}]")));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &x in a.values_1d()? {
        if !(lo..=hi).contains(&x) {
            continue;
        }
        let b = (((x - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + i as f64 * width }).collect();
    Ok(Histogram { edges, counts })
}

impl Histogram {
    /// CSV `lo,hi,count` per bin.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "lo,hi,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(out, "{:?},{:?},{c}", self.edges[i], self.edges[i + 1])?;
        }
        Ok(())
    }
}
