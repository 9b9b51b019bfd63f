use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One uniformly spaced axis `lo = x_0 < ... < x_{n-1} = hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n_points: usize,
}

impl Axis {
    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n_points - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }

    /// Trapezoid weight of node `i`.
    pub fn weight(&self, i: usize) -> f64 {
        let h = self.spacing();
        if i == 0 || i + 1 == self.n_points {
            0.5 * h
        } else {
            h
        }
    }
}

/// Tensor-product quadrature grid in one or two dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::InvalidInput(format!("grids support 1 or 2 dimensions, got {}", axes.len())));
        }
        for a in &axes {
            if !(a.lo < a.hi) || !a.lo.is_finite() || !a.hi.is_finite() || a.n_points < 2 {
                return Err(Error::InvalidInput(format!("invalid grid axis {a:?}")));
            }
        }
        Ok(Self { axes })
    }

    pub fn uniform_1d(lo: f64, hi: f64, n_points: usize) -> Result<Self> {
        Self::new(vec![Axis { lo, hi, n_points }])
    }

    /// Grid spanning the union of the given boxes, `n_points` per axis.
    pub fn covering(boxes: &[Vec<(f64, f64)>], n_points: usize) -> Result<Self> {
        let dim = boxes.first().map(Vec::len).ok_or_else(|| Error::InvalidInput("no boxes to cover".into()))?;
        let axes = (0..dim)
            .map(|d| {
                let (lo, hi) = boxes
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), b| (lo.min(b[d].0), hi.max(b[d].1)));
                Axis { lo, hi, n_points }
            })
            .collect();
        Self::new(axes)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.axes.iter().map(|a| (a.lo, a.hi)).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n_points).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).product()
    }

    /// Coordinates of flat node `idx` (last axis fastest).
    pub fn point(&self, idx: usize) -> Vec<f64> {
        match self.axes.as_slice() {
            [a] => vec![a.point(idx)],
            [a, b] => vec![a.point(idx / b.n_points), b.point(idx % b.n_points)],
            _ => unreachable!("grid dimension validated at construction"),
        }
    }

    /// Trapezoid weight of flat node `idx`.
    pub fn weight(&self, idx: usize) -> f64 {
        match self.axes.as_slice() {
            [a] => a.weight(idx),
            [a, b] => a.weight(idx / b.n_points) * b.weight(idx % b.n_points),
            _ => unreachable!("grid dimension validated at construction"),
        }
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Trapezoid rule applied to values at the nodes.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().enumerate().map(|(i, v)| self.weight(i) * v).sum()
    }

    /// `log ∫ exp(f)` by the trapezoid rule, evaluated in log space.
    pub fn log_integrate_exp(&self, log_values: &[f64]) -> f64 {
        let max = log_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let s: f64 = log_values.iter().enumerate().map(|(i, l)| self.weight(i) * (l - max).exp()).sum();
        max + s.ln()
    }
}
