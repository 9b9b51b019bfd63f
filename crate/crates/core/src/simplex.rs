use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-10;

/// A point `λ` of the probability simplex `Δ_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexWeights(Vec<f64>);

impl TryFrom<Vec<f64>> for SimplexWeights {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        SimplexWeights::new(v)
    }
}

impl From<SimplexWeights> for Vec<f64> {
    fn from(w: SimplexWeights) -> Self {
        w.0
    }
}

impl SimplexWeights {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::InvalidInput("simplex weights need k >= 1".into()));
        }
        if lambda.iter().any(|&l| !(0.0..=1.0).contains(&l)) {
            return Err(Error::InvalidInput(format!("weights {lambda:?} leave [0, 1]")));
        }
        let sum: f64 = lambda.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidInput(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self(lambda))
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("simplex weights need k >= 1".into()));
        }
        Ok(Self(vec![1.0 / k as f64; k]))
    }

    /// Vertex `e_i` of `Δ_k`.
    pub fn vertex(k: usize, i: usize) -> Result<Self> {
        if i >= k {
            return Err(Error::InvalidInput(format!("vertex {i} out of range for k = {k}")));
        }
        let mut v = vec![0.0; k];
        v[i] = 1.0;
        Ok(Self(v))
    }

    /// Numerically stable softmax of unconstrained logits.
    pub fn softmax(logits: &[f64]) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::InvalidInput("softmax of an empty vector".into()));
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        Self::new(exp.into_iter().map(|e| e / z).collect())
    }

    /// Euclidean projection of an arbitrary vector onto `Δ_k` (sort-based).
    pub fn project(v: &[f64]) -> Result<Self> {
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("cannot project an empty or non-finite vector".into()));
        }
        let mut u = v.to_vec();
        u.sort_by(|a, b| b.total_cmp(a));
        let mut cumsum = 0.0;
        let mut theta = 0.0;
        for (j, &uj) in u.iter().enumerate() {
            cumsum += uj;
            let t = (cumsum - 1.0) / (j + 1) as f64;
            if uj - t > 0.0 {
                theta = t;
            }
        }
        Self::from_raw(v.iter().map(|x| (x - theta).max(0.0)).collect())
    }

    /// Accepts a vector that is a simplex point up to rounding: clamps into
    /// `[0, 1]` and renormalizes.
    pub fn from_raw(v: Vec<f64>) -> Result<Self> {
        let clamped: Vec<f64> = v.iter().map(|x| x.clamp(0.0, 1.0)).collect();
        let sum: f64 = clamped.iter().sum();
        if !(sum > 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("{v:?} is not a simplex point")));
        }
        Self::new(clamped.into_iter().map(|x| x / sum).collect())
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.clone()
    }

    /// `x + γ (v − x)` for another simplex point `v` and `γ ∈ [0, 1]`.
    pub fn step_towards(&self, v: &SimplexWeights, gamma: f64) -> Result<Self> {
        if v.k() != self.k() || !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidInput("invalid simplex step".into()));
        }
        let next = self.0.iter().zip(&v.0).map(|(x, y)| ((1.0 - gamma) * x + gamma * y).clamp(0.0, 1.0)).collect();
        Self::new(next)
    }

    pub fn linf_distance(&self, other: &SimplexWeights) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// All points of `Δ_k` whose coordinates are multiples of `1 / resolution`.
    pub fn lattice(k: usize, resolution: usize) -> Vec<SimplexWeights> {
        fn rec(k: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if k == 1 {
                prefix.push(left);
                out.push(prefix.clone());
                prefix.pop();
                return;
            }
            for c in 0..=left {
                prefix.push(c);
                rec(k - 1, left - c, prefix, out);
                prefix.pop();
            }
        }
        let mut counts = Vec::new();
        if k > 0 {
            rec(k, resolution, &mut Vec::new(), &mut counts);
        }
        counts
            .into_iter()
            .map(|c| SimplexWeights(c.into_iter().map(|n| n as f64 / resolution as f64).collect()))
            .collect()
    }
}
