use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Deserialize)]
struct RawSchedule {
    a: f64,
    sigma: f64,
    horizon: f64,
    steps: usize,
}

/// Forward Ornstein-Uhlenbeck process `dX = -a X dt + σ dW` on `[0, T]`,
/// discretized into `N` reverse-time steps of size `h = T / N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule")]
pub struct OuSchedule {
    a: f64,
    sigma: f64,
    horizon: f64,
    steps: usize,
}

impl TryFrom<RawSchedule> for OuSchedule {
    type Error = Error;

    fn try_from(raw: RawSchedule) -> Result<Self> {
        OuSchedule::new(raw.a, raw.sigma, raw.horizon, raw.steps)
    }
}

impl Default for OuSchedule {
    /// `a = 1`, `σ = √2` (stationary law `N(0, 1)`), `T = 5`, `N = 500`.
    fn default() -> Self {
        Self { a: 1.0, sigma: std::f64::consts::SQRT_2, horizon: 5.0, steps: 500 }
    }
}

impl OuSchedule {
    pub fn new(a: f64, sigma: f64, horizon: f64, steps: usize) -> Result<Self> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(a) || !ok(sigma) || !ok(horizon) {
            return Err(Error::InvalidInput(format!(
                "schedule needs positive finite a, sigma, T (got {a}, {sigma}, {horizon})"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidInput("schedule needs at least one step".into()));
        }
        Ok(Self { a, sigma, horizon, steps })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Same process, different step count.
    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        Self::new(self.a, self.sigma, self.horizon, steps)
    }

    /// Variance `σ² / 2a` of the stationary law π.
    pub fn stationary_var(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_quantities() {
        let s = OuSchedule::new(2.0, 3.0, 4.0, 8).unwrap();
        assert_eq!(s.step(), 0.5);
        assert_eq!(s.stationary_var(), 2.25);
        assert_eq!(OuSchedule::default().stationary_var(), 1.0000000000000002);
    }

    #[test]
    fn rejects_invalid() {
        assert!(OuSchedule::new(0.0, 1.0, 1.0, 1).is_err());
        assert!(OuSchedule::new(1.0, -1.0, 1.0, 1).is_err());
        assert!(OuSchedule::new(1.0, 1.0, f64::INFINITY, 1).is_err());
        assert!(OuSchedule::new(1.0, 1.0, 1.0, 0).is_err());
        assert!(serde_json::from_str::<OuSchedule>(r#"{"a":1,"sigma":1,"horizon":1,"steps":0}"#).is_err());
    }
}
