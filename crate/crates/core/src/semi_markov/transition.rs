//! Transition probabilities of the semi-Markov process, plain and with an
//! initial backward time, by forward marching of the evolution equation.
//!
//! The convolution `sum_k int_0^t phi_kj(t - theta) dQ_ik(theta)` uses the
//! product trapezoidal rule: `phi` is interpolated linearly between nodes
//! and integrated against the exact kernel increments. With `phi = 1` the
//! quadrature reproduces `H_i(t)` exactly, so rows stay stochastic to
//! rounding regardless of how rough the sojourn densities are.

use nalgebra::DMatrix;
use serde::Serialize;

use super::grid::TimeGrid;
use super::kernel::{BackwardState, SemiMarkovKernel};
use crate::error::{Error, Result};

/// Largest tolerated `|sum_j phi_ij(t) - 1|` before the solve is rejected.
pub const MAX_ROW_DRIFT: f64 = 1e-4;

/// Kernel increments `[Q_ik(u + t_{l+1}) - Q_ik(u + t_l)] / (1 - H_i(u))`
/// on a uniform grid, plus the matching survival ratios.
#[derive(Debug, Clone)]
pub struct KernelIncrements {
    m: usize,
    count: usize,
    delta: Vec<f64>,
    survival: Vec<f64>,
}

impl KernelIncrements {
    /// `count` increments starting at backward time `u` (`count + 1` survival values).
    pub fn new(kernel: &SemiMarkovKernel, step: f64, count: usize, u: f64) -> Result<Self> {
        let m = kernel.state_count();
        let mut base = vec![1.0; m];
        for (i, b) in base.iter_mut().enumerate() {
            *b = BackwardState::new(i, u).conditioning(kernel)?;
        }
        Ok(Self::with_base(kernel, step, count, u, &base))
    }

    /// Like [`KernelIncrements::new`] but only conditions the row of
    /// `start.state`; other rows are left unnormalised.
    pub fn for_state(kernel: &SemiMarkovKernel, step: f64, count: usize, start: BackwardState) -> Result<Self> {
        let survival = start.conditioning(kernel)?;
        let mut base = vec![1.0; kernel.state_count()];
        base[start.state] = survival;
        Ok(Self::with_base(kernel, step, count, start.backward, &base))
    }

    fn with_base(kernel: &SemiMarkovKernel, step: f64, count: usize, u: f64, base: &[f64]) -> Self {
        let m = kernel.state_count();
        let mut delta = vec![0.0; m * m * count];
        let mut survival = vec![0.0; m * (count + 1)];
        for i in 0..m {
            for l in 0..=count {
                survival[i * (count + 1) + l] = kernel.survival(i, u + l as f64 * step) / base[i];
            }
            for k in 0..m {
                if kernel.embedded(i, k) == 0.0 {
                    continue;
                }
                for l in 0..count {
                    let a = u + l as f64 * step;
                    let b = u + (l + 1) as f64 * step;
                    delta[(i * m + k) * count + l] = kernel.q_increment(i, k, a, b) / base[i];
                }
            }
        }
        Self { m, count, delta, survival }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Increment of `Q_ik` over the `l`-th interval.
    #[inline]
    pub fn delta(&self, i: usize, k: usize, l: usize) -> f64 {
        self.delta[(i * self.m + k) * self.count + l]
    }

    /// `(1 - H_i(u + t_l)) / (1 - H_i(u))`.
    #[inline]
    pub fn survival(&self, i: usize, l: usize) -> f64 {
        self.survival[i * (self.count + 1) + l]
    }

    /// Product-trapezoid weight of the node `theta_l` in a convolution over
    /// `[0, t_n]`: half of each adjacent increment.
    #[inline]
    pub fn weight(&self, i: usize, k: usize, l: usize, n: usize) -> f64 {
        let left = if l > 0 { self.delta(i, k, l - 1) } else { 0.0 };
        let right = if l < n { self.delta(i, k, l) } else { 0.0 };
        0.5 * (left + right)
    }

    /// Same as [`Self::weight`] for a window `[t_a, t_b]` starting at node `a`.
    #[inline]
    pub fn window_weight(&self, i: usize, k: usize, l: usize, a: usize, b: usize) -> f64 {
        let left = if l > a { self.delta(i, k, l - 1) } else { 0.0 };
        let right = if l < b { self.delta(i, k, l) } else { 0.0 };
        0.5 * (left + right)
    }

    /// `I - C_0` where `C_0[i][k]` is the weight on the unknown at `theta = 0`.
    pub(crate) fn implicit_matrix(&self) -> DMatrix<f64> {
        let m = self.m;
        DMatrix::from_fn(m, m, |i, k| {
            let c = if self.count > 0 { 0.5 * self.delta(i, k, 0) } else { 0.0 };
            if i == k {
                1.0 - c
            } else {
                -c
            }
        })
    }
}

/// `phi_ij(t_k)` (or `^b phi_ij(u; t_k)`) on a time grid.
#[derive(Debug, Clone, Serialize)]
pub struct TransitionTable {
    grid: TimeGrid,
    m: usize,
    backward: f64,
    values: Vec<f64>,
}

impl TransitionTable {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn state_count(&self) -> usize {
        self.m
    }

    pub fn backward(&self) -> f64 {
        self.backward
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(k * self.m + i) * self.m + j]
    }

    pub fn row(&self, i: usize, k: usize) -> &[f64] {
        let start = (k * self.m + i) * self.m;
        &self.values[start..start + self.m]
    }

    pub fn max_row_drift(&self) -> f64 {
        let mut drift: f64 = 0.0;
        for k in 0..self.grid.len() {
            for i in 0..self.m {
                drift = drift.max((self.row(i, k).iter().sum::<f64>() - 1.0).abs());
            }
        }
        drift
    }

    /// Rows `(t, i, j, value)`.
    pub fn entries(&self) -> impl Iterator<Item = (f64, usize, usize, f64)> + '_ {
        let m = self.m;
        (0..self.grid.len()).flat_map(move |k| {
            (0..m).flat_map(move |i| (0..m).map(move |j| (self.grid.time(k), i, j, self.get(i, j, k))))
        })
    }

    fn check_drift(self) -> Result<Self> {
        let max_drift = self.max_row_drift();
        if max_drift > MAX_ROW_DRIFT || !max_drift.is_finite() {
            return Err(Error::RowSumDrift { max_drift });
        }
        Ok(self)
    }
}

fn check_step(kernel: &SemiMarkovKernel, grid: &TimeGrid) -> Result<()> {
    for i in 0..kernel.state_count() {
        if kernel.survival(i, grid.step()) <= 0.0 {
            return Err(Error::invalid(format!(
                "time step {} too coarse: state {i} is left with certainty within one step",
                grid.step()
            )));
        }
    }
    Ok(())
}

/// Solves the evolution equation for `phi_ij` on `grid`.
pub fn transition_probabilities(kernel: &SemiMarkovKernel, grid: &TimeGrid) -> Result<TransitionTable> {
    check_step(kernel, grid)?;
    let m = kernel.state_count();
    let steps = grid.steps();
    let inc = KernelIncrements::new(kernel, grid.step(), steps, 0.0)?;
    let lu = inc.implicit_matrix().lu();
    let mut values = vec![0.0; (steps + 1) * m * m];
    for i in 0..m {
        values[i * m + i] = 1.0;
    }
    let idx = |k: usize, i: usize, j: usize| (k * m + i) * m + j;
    for n in 1..=steps {
        let mut rhs = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            rhs[(i, i)] = inc.survival(i, n);
            for k in 0..m {
                if kernel.embedded(i, k) == 0.0 {
                    continue;
                }
                for l in 1..=n {
                    let w = inc.weight(i, k, l, n);
                    if w == 0.0 {
                        continue;
                    }
                    let back = n - l;
                    for j in 0..m {
                        rhs[(i, j)] += w * values[idx(back, k, j)];
                    }
                }
            }
        }
        let sol =
            lu.solve(&rhs).ok_or_else(|| Error::Numerical("singular implicit step in evolution equation".into()))?;
        for i in 0..m {
            for j in 0..m {
                values[idx(n, i, j)] = sol[(i, j)];
            }
        }
    }
    TransitionTable { grid: *grid, m, backward: 0.0, values }.check_drift()
}

/// `^b phi_ij(u; t)` from a precomputed `phi` table, in one quadrature pass.
pub fn backward_transition_probabilities(
    kernel: &SemiMarkovKernel,
    u: f64,
    phi: &TransitionTable,
) -> Result<TransitionTable> {
    let m = kernel.state_count();
    if phi.m != m {
        return Err(Error::GridMismatch(format!("phi table has {} states, kernel {m}", phi.m)));
    }
    let grid = phi.grid;
    let steps = grid.steps();
    let inc = KernelIncrements::new(kernel, grid.step(), steps, u)?;
    let mut values = vec![0.0; (steps + 1) * m * m];
    for n in 0..=steps {
        for i in 0..m {
            let out = &mut values[(n * m + i) * m..(n * m + i + 1) * m];
            out[i] = inc.survival(i, n);
            for k in 0..m {
                if kernel.embedded(i, k) == 0.0 {
                    continue;
                }
                for l in 0..=n {
                    let w = inc.weight(i, k, l, n);
                    if w == 0.0 {
                        continue;
                    }
                    for (j, o) in out.iter_mut().enumerate() {
                        *o += w * phi.get(k, j, n - l);
                    }
                }
            }
        }
    }
    TransitionTable { grid, m, backward: u, values }.check_drift()
}
