//! Time-indexed vector fields `s(t, x)`: analytic mixture scores, trained
//! networks and λ-fused combinations all implement [`ScoreField`].

use std::sync::Arc;

use crate::error::{check_dim, Result};

pub trait ScoreField: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `s(t, x)` into `out`. Callers guarantee `x.len() == out.len() == dim()`.
    fn evaluate_into(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// Evaluates `xs.len() / dim()` points sharing the same `t`; rows are
    /// contiguous in `xs` and `out`.
    fn evaluate_batch(&self, t: f64, xs: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for (x, o) in xs.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            self.evaluate_into(t, x, o);
        }
    }

    fn evaluate(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let mut out = vec![0.0; self.dim()];
        self.evaluate_into(t, x, &mut out);
        Ok(out)
    }
}

/// Shared handle to a score field.
pub type FieldHandle = Arc<dyn ScoreField>;

impl<F: ScoreField + ?Sized> ScoreField for Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn evaluate_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (**self).evaluate_into(t, x, out)
    }

    fn evaluate_batch(&self, t: f64, xs: &[f64], out: &mut [f64]) {
        (**self).evaluate_batch(t, xs, out)
    }
}

impl<F: ScoreField + ?Sized> ScoreField for Box<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn evaluate_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (**self).evaluate_into(t, x, out)
    }

    fn evaluate_batch(&self, t: f64, xs: &[f64], out: &mut [f64]) {
        (**self).evaluate_batch(t, xs, out)
    }
}
