use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time nodes `t_k = k * step`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    step: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(step: f64, horizon: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::invalid(format!("time step must be positive, got {step}")));
        }
        if !(horizon.is_finite() && horizon >= 0.0) {
            return Err(Error::invalid(format!("horizon must be >= 0, got {horizon}")));
        }
        let steps = (horizon / step).round();
        if (steps * step - horizon).abs() > 1e-12 * horizon.max(1.0) {
            return Err(Error::invalid(format!("horizon {horizon} is not a whole number of steps of {step}")));
        }
        Ok(Self { step, steps: steps as usize })
    }

    pub fn with_steps(step: f64, steps: usize) -> Result<Self> {
        Self::new(step, step * steps as f64)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of intervals `K`; there are `K + 1` nodes.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps)
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.step
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|k| self.time(k))
    }

    /// Index of the node at `t`, if `t` is a node within `1e-9` steps.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = (t / self.step).round();
        if k < 0.0 || k > self.steps as f64 {
            return None;
        }
        if (k * self.step - t).abs() <= 1e-9 * self.step {
            Some(k as usize)
        } else {
            None
        }
    }
}
