use serde::Serialize;

use super::grid::{Coupling, RateGrid};
use crate::error::{Error, Result};
use crate::semi_markov::TimeGrid;

/// What a [`MomentSurface`] tabulates, at zero backward time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "quantity", rename_all = "snake_case")]
pub enum Quantity {
    /// `E[v(0, s)^n]`, the n-th moment of the discount factor.
    ZcbMoment { order: u32 },
    /// `E[delta(s)]`.
    RateMean,
    /// `E[delta(s) delta(s + lag)]`.
    ProductMoment { lag: f64 },
}

impl Quantity {
    pub fn label(&self) -> String {
        match *self {
            Self::ZcbMoment { order } => format!("zcb_moment_{order}"),
            Self::RateMean => "rate_mean".into(),
            Self::ProductMoment { lag } => format!("product_moment_lag_{lag}"),
        }
    }
}

/// Values on the `(state, time to maturity, starting rate)` lattice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSurface {
    pub(crate) quantity: Quantity,
    pub(crate) time: TimeGrid,
    pub(crate) rates: RateGrid,
    pub(crate) states: usize,
    pub(crate) coupling: Coupling,
    pub(crate) quadrature_order: usize,
    pub(crate) coverage_tolerance: f64,
    pub(crate) values: Vec<f64>,
}

impl MomentSurface {
    pub fn quantity(&self) -> Quantity {
        self.quantity
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time
    }

    pub fn rate_grid(&self) -> &RateGrid {
        &self.rates
    }

    pub fn state_count(&self) -> usize {
        self.states
    }

    pub fn coupling(&self) -> Coupling {
        self.coupling
    }

    pub fn quadrature_order(&self) -> usize {
        self.quadrature_order
    }

    #[inline]
    pub(crate) fn offset(&self, i: usize, k: usize) -> usize {
        (i * self.time.len() + k) * self.rates.len()
    }

    /// Value at state `i`, time node `k`, rate node `j`.
    pub fn value(&self, i: usize, k: usize, j: usize) -> f64 {
        self.values[self.offset(i, k) + j]
    }

    /// Values over the rate lattice at state `i`, time node `k`.
    pub fn slice(&self, i: usize, k: usize) -> &[f64] {
        let o = self.offset(i, k);
        &self.values[o..o + self.rates.len()]
    }

    /// Linear interpolation in the rate at a time node; `r` must lie on the lattice.
    pub fn interpolate(&self, i: usize, k: usize, r: f64) -> Result<f64> {
        if i >= self.states {
            return Err(Error::StateIndex { index: i, count: self.states });
        }
        if k >= self.time.len() {
            return Err(Error::OutsideHorizon {
                time: self.time.time(k),
                step: self.time.step(),
                horizon: self.time.horizon(),
            });
        }
        if !self.rates.contains(r) {
            return Err(Error::OutsideGrid { rate: r, lower: self.rates.lower(), upper: self.rates.upper() });
        }
        let (idx, frac) = self.rates.locate(r);
        let s = self.slice(i, k);
        Ok(s[idx] + frac * (s[idx + 1] - s[idx]))
    }

    /// Time node index of `s`, if `s` is on the grid.
    pub fn time_index(&self, s: f64) -> Result<usize> {
        self.time.index_of(s).ok_or(Error::OutsideHorizon {
            time: s,
            step: self.time.step(),
            horizon: self.time.horizon(),
        })
    }

    /// Rows `(state, s, x, value)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, f64, f64, f64)> + '_ {
        (0..self.states).flat_map(move |i| {
            (0..self.time.len()).flat_map(move |k| {
                (0..self.rates.len()).map(move |j| (i, self.time.time(k), self.rates.node(j), self.value(i, k, j)))
            })
        })
    }

    /// Compact JSON-friendly table: `values[state][time][rate]`.
    pub fn table(&self) -> SurfaceTable {
        SurfaceTable {
            quantity: self.quantity,
            coupling: self.coupling,
            step: self.time.step(),
            horizon: self.time.horizon(),
            rate_lower: self.rates.lower(),
            rate_upper: self.rates.upper(),
            rate_nodes: self.rates.len(),
            values: (0..self.states)
                .map(|i| (0..self.time.len()).map(|k| self.slice(i, k).to_vec()).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceTable {
    #[serde(flatten)]
    pub quantity: Quantity,
    pub coupling: Coupling,
    pub step: f64,
    pub horizon: f64,
    pub rate_lower: f64,
    pub rate_upper: f64,
    pub rate_nodes: usize,
    pub values: Vec<Vec<Vec<f64>>>,
}
