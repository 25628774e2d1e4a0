//! Renewal-equation solvers for bond moments, the rate mean and the lagged
//! product moment.
//!
//! Each quantity `U` solves, with `S_i` the survival of state `i`,
//!
//! ```text
//! U_i(t, x) = S_i(t) f_i(t, x)
//!           + sum_k int_0^t E_x[g_i(theta) U_k(t - theta, r(theta))] dQ_ik(theta)
//! ```
//!
//! The convolution uses the product trapezoidal rule of the transition
//! solver, the expectation over `r(theta)` a quadrature of the exact
//! transition law, and `U_k(t - theta, .)` is interpolated linearly on the
//! rate lattice. The `theta = 0` node couples the unknowns at the current
//! time step and is solved through the small `(I - C_0)` system.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::grid::{Coupling, RateGrid, SolverConfig};
use super::surface::{MomentSurface, Quantity};
use crate::error::{Error, Result};
use crate::rate_models::{standard_hermite, LawFamily, RegimeRateModel};
use crate::semi_markov::{BackwardState, KernelIncrements, SemiMarkovKernel, TimeGrid};

/// Quadrature node folded with linear interpolation: `a * v[idx] + b * v[idx + 1]`.
type Tap = (usize, f64, f64);

#[inline]
fn apply(taps: &[Tap], v: &[f64]) -> f64 {
    let (mut lo, mut hi) = (0.0, 0.0);
    for &(idx, a, b) in taps {
        let pair = &v[idx..idx + 2];
        lo += a * pair[0];
        hi += b * pair[1];
    }
    lo + hi
}

/// Everything fixed by a solve: model, lattice and numerical settings.
struct Lattice<'a> {
    kernel: &'a SemiMarkovKernel,
    model: &'a RegimeRateModel,
    time: TimeGrid,
    rates: RateGrid,
    m: usize,
    order: usize,
    coverage_tolerance: f64,
    coupling: Coupling,
    hermite: (Vec<f64>, Vec<f64>),
    successors: Vec<Vec<usize>>,
}

impl<'a> Lattice<'a> {
    fn for_solve(kernel: &'a SemiMarkovKernel, model: &'a RegimeRateModel, config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        let time = TimeGrid::new(config.step, config.horizon)?;
        let rates = RateGrid::for_model(model, &config.rate_grid)?;
        Self::assemble(kernel, model, time, rates, config.quadrature_order, config.coverage_tolerance, config.coupling)
    }

    fn for_surface(kernel: &'a SemiMarkovKernel, model: &'a RegimeRateModel, surface: &MomentSurface) -> Result<Self> {
        Self::assemble(
            kernel,
            model,
            surface.time,
            surface.rates,
            surface.quadrature_order,
            surface.coverage_tolerance,
            surface.coupling,
        )
    }

    fn assemble(
        kernel: &'a SemiMarkovKernel,
        model: &'a RegimeRateModel,
        time: TimeGrid,
        rates: RateGrid,
        order: usize,
        coverage_tolerance: f64,
        coupling: Coupling,
    ) -> Result<Self> {
        let m = kernel.state_count();
        if model.state_count() != m {
            return Err(Error::invalid(format!(
                "kernel has {m} states but the rate model has {}",
                model.state_count()
            )));
        }
        for i in 0..m {
            if kernel.survival(i, time.step()) <= 0.0 {
                return Err(Error::invalid(format!(
                    "time step {} too coarse: state {i} is left with certainty within one step",
                    time.step()
                )));
            }
        }
        let successors = (0..m).map(|i| kernel.successors(i).map(|(k, _, _)| k).collect()).collect();
        Ok(Self {
            kernel,
            model,
            time,
            rates,
            m,
            order,
            coverage_tolerance,
            coupling,
            hermite: standard_hermite(order),
            successors,
        })
    }

    fn surface(&self, quantity: Quantity, values: Vec<f64>) -> MomentSurface {
        MomentSurface {
            quantity,
            time: self.time,
            rates: self.rates,
            states: self.m,
            coupling: self.coupling,
            quadrature_order: self.order,
            coverage_tolerance: self.coverage_tolerance,
            values,
        }
    }

    fn theta(&self, l: usize) -> f64 {
        self.time.time(l)
    }

    fn check_node(&self, i: usize, x: f64, time: f64, node: f64) -> Result<()> {
        let escape = self.rates.escape(node);
        let tolerance = self.coverage_tolerance * self.rates.width();
        if escape > tolerance || !node.is_finite() {
            return Err(Error::GridCoverage {
                state: i,
                rate: x,
                time,
                node,
                escape,
                tolerance,
                lower: self.rates.lower(),
                upper: self.rates.upper(),
            });
        }
        Ok(())
    }

    /// Pushes `(node, weight)` pairs of the law `family.at(x)`.
    fn rule(&self, family: &LawFamily, x: f64, out: &mut Vec<(f64, f64)>) -> Result<()> {
        out.clear();
        match *family {
            LawFamily::Gaussian { decay, drift, variance } => {
                let mean = drift + decay * x;
                if variance > 0.0 {
                    let sd = variance.sqrt();
                    let (z, w) = &self.hermite;
                    out.extend(z.iter().zip(w).map(|(&z, &w)| (mean + sd * z, w)));
                } else {
                    out.push((mean, 1.0));
                }
            }
            LawFamily::ChiSquared { .. } => {
                let q = family.at(x).quadrature(self.order)?;
                out.extend(q.nodes.iter().copied().zip(q.weights.iter().copied()));
            }
        }
        Ok(())
    }

    /// Folds `(node, coefficient)` pairs into interpolation taps.
    fn fold(&self, i: usize, x: f64, time: f64, pairs: &[(f64, f64)], factor: f64, taps: &mut Vec<Tap>) -> Result<()> {
        taps.clear();
        for &(y, w) in pairs {
            self.check_node(i, x, time, y)?;
            let (idx, frac) = self.rates.locate(y);
            let c = factor * w;
            taps.push((idx, c * (1.0 - frac), c * frac));
        }
        Ok(())
    }

    fn check_rate(&self, r: f64) -> Result<()> {
        if !self.rates.contains(r) {
            return Err(Error::OutsideGrid { rate: r, lower: self.rates.lower(), upper: self.rates.upper() });
        }
        Ok(())
    }
}

/// Kernel of the convolution at one node: the law of `r(theta)` used in the
/// expectation and the multiplier applied to it.
#[derive(Clone, Copy)]
struct Step {
    law: LawFamily,
    log_factor: Option<(f64, f64)>,
}

impl Step {
    fn factor(&self, x: f64) -> f64 {
        match self.log_factor {
            Some((c, per_rate)) => (c + per_rate * x).exp(),
            None => 1.0,
        }
    }
}

/// The convolution step for the quantity at node `theta` of state `i`.
fn step_at(lat: &Lattice, quantity: Quantity, i: usize, theta: f64) -> Result<Step> {
    match quantity {
        Quantity::ZcbMoment { order } => {
            let d = lat.model.discounted_family(i, theta, order)?;
            let law = match lat.coupling {
                Coupling::Joint => d.law,
                Coupling::Independent => lat.model.law_family(i, theta)?,
            };
            Ok(Step { law, log_factor: Some((d.log_bond_constant, d.log_bond_per_rate)) })
        }
        Quantity::RateMean | Quantity::ProductMoment { .. } => {
            Ok(Step { law: lat.model.law_family(i, theta)?, log_factor: None })
        }
    }
}

/// Taps of the convolution at node `theta` for starting rate `x`.
fn step_taps(
    lat: &Lattice,
    step: &Step,
    i: usize,
    x: f64,
    theta: f64,
    pairs: &mut Vec<(f64, f64)>,
    taps: &mut Vec<Tap>,
) -> Result<()> {
    lat.rule(&step.law, x, pairs)?;
    lat.fold(i, x, theta, pairs, step.factor(x), taps)
}

/// Folded rules for every `(state, node l >= 1, rate node)` of a march.
struct RuleTable {
    width: usize,
    steps: usize,
    n: usize,
    taps: Vec<Tap>,
}

impl RuleTable {
    fn build(lat: &Lattice, quantity: Quantity, steps: usize) -> Result<Self> {
        let n = lat.rates.len();
        let m = lat.m;
        let mut kernels = Vec::with_capacity(m * steps);
        for i in 0..m {
            for l in 1..=steps {
                kernels.push(step_at(lat, quantity, i, lat.theta(l))?);
            }
        }
        let width = kernels
            .iter()
            .map(|s| match s.law {
                LawFamily::Gaussian { variance, .. } if variance <= 0.0 => 1,
                _ => lat.order,
            })
            .max()
            .unwrap_or(1);
        let mut taps = vec![(0, 0.0, 0.0); m * steps * n * width];
        if !taps.is_empty() {
            taps.par_chunks_mut(n * width).enumerate().try_for_each_init(
                || (Vec::new(), Vec::new()),
                |(pairs, local), (slot, chunk)| -> Result<()> {
                    let (i, l) = (slot / steps, slot % steps + 1);
                    let theta = lat.theta(l);
                    for (j, cell) in chunk.chunks_mut(width).enumerate() {
                        step_taps(lat, &kernels[slot], i, lat.rates.node(j), theta, pairs, local)?;
                        cell[..local.len()].copy_from_slice(local);
                    }
                    Ok(())
                },
            )?;
        }
        Ok(Self { width, steps, n, taps })
    }

    #[inline]
    fn get(&self, i: usize, l: usize, j: usize) -> &[Tap] {
        let o = ((i * self.steps + (l - 1)) * self.n + j) * self.width;
        &self.taps[o..o + self.width]
    }
}

#[inline]
fn offset(time_len: usize, n: usize, i: usize, k: usize) -> usize {
    (i * time_len + k) * n
}

/// `sum_{l=1}^{k} sum_kk w(i, kk, l, k) E[U_kk(t_k - theta_l, r(theta_l))]`.
fn explicit_convolution(
    lat: &Lattice,
    inc: &KernelIncrements,
    values: &[f64],
    time_len: usize,
    i: usize,
    k: usize,
    mut rule: impl FnMut(usize) -> Result<Vec<Tap>>,
) -> Result<f64> {
    let n = lat.rates.len();
    let mut acc = 0.0;
    for l in 1..=k {
        let taps = rule(l)?;
        for &kk in &lat.successors[i] {
            let w = inc.weight(i, kk, l, k);
            if w == 0.0 {
                continue;
            }
            let o = offset(time_len, n, kk, k - l);
            acc += w * apply(&taps, &values[o..o + n]);
        }
    }
    Ok(acc)
}

/// Time steps per block of the march.
const BLOCK: usize = 32;

/// Marches the renewal equation on the lattice given the source term.
///
/// Steps go in blocks: terms reaching back before the block are gathered
/// first, visiting each folded rule once per block instead of once per step.
fn march<F>(lat: &Lattice, inc: &KernelIncrements, table: &RuleTable, source: F) -> Result<Vec<f64>>
where
    F: Fn(usize, usize, usize) -> Result<f64> + Sync,
{
    let (m, n) = (lat.m, lat.rates.len());
    let time_len = lat.time.len();
    let inverse = inc
        .implicit_matrix()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("implicit renewal system is singular".into()))?;
    let mut values = vec![0.0; m * time_len * n];
    let mut k0 = 0;
    while k0 < time_len {
        let k1 = (k0 + BLOCK).min(time_len);
        let width = k1 - k0;
        // history[j][i * width + (k - k0)]
        let history: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| -> Result<Vec<f64>> {
                let mut acc = vec![0.0; m * width];
                for i in 0..m {
                    for k in k0..k1 {
                        acc[i * width + k - k0] = source(i, k, j)?;
                    }
                    for l in 1..k1 {
                        // Terms with k - l < k0, i.e. k in [max(k0, l), min(k1, l + k0)).
                        let (lo, hi) = (k0.max(l), k1.min(l + k0));
                        if lo >= hi {
                            continue;
                        }
                        let taps = table.get(i, l, j);
                        for k in lo..hi {
                            let mut sum = 0.0;
                            for &kk in &lat.successors[i] {
                                let w = inc.weight(i, kk, l, k);
                                if w != 0.0 {
                                    let o = offset(time_len, n, kk, k - l);
                                    sum += w * apply(taps, &values[o..o + n]);
                                }
                            }
                            acc[i * width + k - k0] += sum;
                        }
                    }
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        for k in k0..k1 {
            let rows: Vec<Vec<f64>> = (0..n)
                .into_par_iter()
                .map(|j| {
                    let mut rhs = vec![0.0; m];
                    for (i, slot) in rhs.iter_mut().enumerate() {
                        let mut acc = history[j][i * width + k - k0];
                        for l in 1..=k - k0 {
                            let taps = table.get(i, l, j);
                            for &kk in &lat.successors[i] {
                                let w = inc.weight(i, kk, l, k);
                                if w != 0.0 {
                                    let o = offset(time_len, n, kk, k - l);
                                    acc += w * apply(taps, &values[o..o + n]);
                                }
                            }
                        }
                        *slot = acc;
                    }
                    rhs
                })
                .collect();
            for (j, rhs) in rows.iter().enumerate() {
                for i in 0..m {
                    let v = if k == 0 { rhs[i] } else { solve_row(&inverse, rhs, i) };
                    if !v.is_finite() {
                        return Err(Error::Numerical(format!(
                            "non-finite value at state {i}, time {}, rate {}",
                            lat.time.time(k),
                            lat.rates.node(j)
                        )));
                    }
                    values[offset(time_len, n, i, k) + j] = v;
                }
            }
        }
        k0 = k1;
    }
    Ok(values)
}

#[inline]
fn solve_row(inverse: &DMatrix<f64>, rhs: &[f64], i: usize) -> f64 {
    rhs.iter().enumerate().map(|(kk, r)| inverse[(i, kk)] * r).sum()
}

/// Surface of `E[v(0, s)^n]` for `s` on the solver grid.
pub fn solve_zcb_moment(
    n: u32,
    kernel: &SemiMarkovKernel,
    model: &RegimeRateModel,
    config: &SolverConfig,
) -> Result<MomentSurface> {
    if n == 0 {
        return Err(Error::invalid("moment order must be at least 1"));
    }
    let lat = Lattice::for_solve(kernel, model, config)?;
    let quantity = Quantity::ZcbMoment { order: n };
    let steps = lat.time.steps();
    let inc = KernelIncrements::new(kernel, lat.time.step(), steps, 0.0)?;
    let table = RuleTable::build(&lat, quantity, steps)?;
    let bonds = discounted_table(&lat, n, steps)?;
    let values = march(&lat, &inc, &table, |i, k, j| {
        let (c, per_rate) = bonds[i * (steps + 1) + k];
        Ok(inc.survival(i, k) * (c + per_rate * lat.rates.node(j)).exp())
    })?;
    Ok(lat.surface(quantity, values))
}

fn discounted_table(lat: &Lattice, n: u32, steps: usize) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(lat.m * (steps + 1));
    for i in 0..lat.m {
        for k in 0..=steps {
            let d = lat.model.discounted_family(i, lat.theta(k), n)?;
            out.push((d.log_bond_constant, d.log_bond_per_rate));
        }
    }
    Ok(out)
}

/// Surface of `E[delta(s)]`.
pub fn solve_rate_mean(
    kernel: &SemiMarkovKernel,
    model: &RegimeRateModel,
    config: &SolverConfig,
) -> Result<MomentSurface> {
    let lat = Lattice::for_solve(kernel, model, config)?;
    let steps = lat.time.steps();
    let inc = KernelIncrements::new(kernel, lat.time.step(), steps, 0.0)?;
    let table = RuleTable::build(&lat, Quantity::RateMean, steps)?;
    let laws = law_table(&lat, steps)?;
    let values = march(&lat, &inc, &table, |i, k, j| {
        Ok(inc.survival(i, k) * laws[i * (steps + 1) + k].at(lat.rates.node(j)).mean())
    })?;
    Ok(lat.surface(Quantity::RateMean, values))
}

fn law_table(lat: &Lattice, steps: usize) -> Result<Vec<LawFamily>> {
    let mut out = Vec::with_capacity(lat.m * (steps + 1));
    for i in 0..lat.m {
        for k in 0..=steps {
            out.push(lat.model.law_family(i, lat.theta(k))?);
        }
    }
    Ok(out)
}

fn lag_steps(lat: &Lattice, lag: f64) -> Result<usize> {
    if !(lag >= 0.0 && lag.is_finite()) {
        return Err(Error::invalid(format!("lag must be >= 0, got {lag}")));
    }
    let k = (lag / lat.time.step()).round();
    if (k * lat.time.step() - lag).abs() > 1e-9 * lat.time.step() {
        return Err(Error::invalid(format!("lag {lag} is not a multiple of the time step {}", lat.time.step())));
    }
    Ok(k as usize)
}

/// Regime-`i` moment `E[r(s) r(s + h)]` with no jump before `s + h`.
fn survival_product(lat: &Lattice, i: usize, x: f64, k: usize, lag: usize) -> Result<f64> {
    let (s, tau) = (lat.theta(k), lat.theta(k + lag));
    let early = lat.model.law_family(i, s)?.at(x);
    let late = lat.model.law_family(i, tau)?.at(x);
    Ok(early.mean() * late.mean() + lat.model.lag_decay(i, s, tau)? * early.variance())
}

/// Taps for `E[r(s) g(r(theta))]`, `s <= theta`, in regime `i` from `x`.
fn mid_window_taps(
    lat: &Lattice,
    i: usize,
    x: f64,
    k: usize,
    l: usize,
    pairs: &mut Vec<(f64, f64)>,
    taps: &mut Vec<Tap>,
) -> Result<()> {
    let (s, theta) = (lat.theta(k), lat.theta(l));
    let early = lat.model.law_family(i, s)?;
    let late = lat.model.law_family(i, theta)?;
    let mz = early.at(x).mean();
    match (lat.coupling, late) {
        (Coupling::Independent, _) => {
            lat.rule(&late, x, pairs)?;
            lat.fold(i, x, theta, pairs, mz, taps)
        }
        (Coupling::Joint, LawFamily::Gaussian { .. }) => {
            let late_law = late.at(x);
            let var_late = late_law.variance();
            let slope = if var_late > 0.0 {
                lat.model.lag_decay(i, s, theta)? * early.at(x).variance() / var_late
            } else {
                0.0
            };
            let my = late_law.mean();
            lat.rule(&late, x, pairs)?;
            for p in pairs.iter_mut() {
                p.1 *= mz + slope * (p.0 - my);
            }
            lat.fold(i, x, theta, pairs, 1.0, taps)
        }
        (Coupling::Joint, LawFamily::ChiSquared { .. }) => {
            unreachable!("non-Gaussian joint windows go through Propagated")
        }
    }
}

/// `E_y[R_kk(t_L - theta_d, r(theta_d))]` in regime `i` for every lattice
/// node `y` and offset `d = 0..=L`: the rate mean carried back across the
/// window on the lattice. Integrating it against the size-biased law of
/// `r(s)` gives the joint mid-window term by the Markov property.
struct Propagated {
    n: usize,
    m: usize,
    lag: usize,
    values: Vec<f64>,
}

impl Propagated {
    /// Needed when the window pair `(r(s), r(theta))` has no regression rule.
    fn wanted(lat: &Lattice, lag: usize) -> bool {
        lag > 0 && lat.coupling == Coupling::Joint && !lat.model.is_gaussian()
    }

    fn build(lat: &Lattice, rate_mean: &MomentSurface, lag: usize) -> Result<Self> {
        let (m, n) = (lat.m, lat.rates.len());
        let table = RuleTable::build(lat, Quantity::RateMean, lag)?;
        let mut values = vec![0.0; m * m * (lag + 1) * n];
        values.par_chunks_mut(n).enumerate().for_each(|(slot, out)| {
            let d = slot % (lag + 1);
            let kk = (slot / (lag + 1)) % m;
            let i = slot / ((lag + 1) * m);
            let target = rate_mean.slice(kk, lag - d);
            if d == 0 {
                out.copy_from_slice(target);
            } else {
                for (j, v) in out.iter_mut().enumerate() {
                    *v = apply(table.get(i, d, j), target);
                }
            }
        });
        Ok(Self { n, m, lag, values })
    }

    fn slice(&self, i: usize, kk: usize, d: usize) -> &[f64] {
        let o = ((i * self.m + kk) * (self.lag + 1) + d) * self.n;
        &self.values[o..o + self.n]
    }
}

/// `sum_{l=k}^{k+L} sum_kk w E[r(s) R_kk(t_{k+L} - theta_l, r(theta_l))]`.
#[allow(clippy::too_many_arguments)]
fn mid_window(
    lat: &Lattice,
    inc: &KernelIncrements,
    rate_mean: &MomentSurface,
    i: usize,
    x: f64,
    k: usize,
    lag: usize,
    ahead: Option<&Propagated>,
    pairs: &mut Vec<(f64, f64)>,
    taps: &mut Vec<Tap>,
) -> Result<f64> {
    if lag == 0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    if let Some(ahead) = ahead {
        let s = lat.theta(k);
        lat.rule(&lat.model.law_family(i, s)?, x, pairs)?;
        for p in pairs.iter_mut() {
            p.1 *= p.0;
        }
        lat.fold(i, x, s, pairs, 1.0, taps)?;
        for l in k..=k + lag {
            for &kk in &lat.successors[i] {
                let w = inc.window_weight(i, kk, l, k, k + lag);
                if w != 0.0 {
                    acc += w * apply(taps, ahead.slice(i, kk, l - k));
                }
            }
        }
        return Ok(acc);
    }
    for l in k..=k + lag {
        let mut ready = false;
        for &kk in &lat.successors[i] {
            let w = inc.window_weight(i, kk, l, k, k + lag);
            if w == 0.0 {
                continue;
            }
            if !ready {
                mid_window_taps(lat, i, x, k, l, pairs, taps)?;
                ready = true;
            }
            acc += w * apply(taps, rate_mean.slice(kk, k + lag - l));
        }
    }
    Ok(acc)
}

/// Surface of `E[delta(s) delta(s + lag)]`; `rate_mean` must share the
/// lattice and reach at least `lag`.
pub fn solve_product_moment(
    lag: f64,
    rate_mean: &MomentSurface,
    kernel: &SemiMarkovKernel,
    model: &RegimeRateModel,
    config: &SolverConfig,
) -> Result<MomentSurface> {
    let lat = Lattice::for_solve(kernel, model, config)?;
    check_rate_mean(&lat, rate_mean)?;
    let lag_k = lag_steps(&lat, lag)?;
    if rate_mean.time.steps() < lag_k {
        return Err(Error::GridMismatch(format!(
            "rate-mean surface reaches {} but the lag is {lag}",
            rate_mean.time.horizon()
        )));
    }
    let steps = lat.time.steps();
    let inc = KernelIncrements::new(kernel, lat.time.step(), steps + lag_k, 0.0)?;
    let table = RuleTable::build(&lat, Quantity::RateMean, steps)?;
    let ahead = Propagated::wanted(&lat, lag_k).then(|| Propagated::build(&lat, rate_mean, lag_k)).transpose()?;
    let values = march(&lat, &inc, &table, |i, k, j| {
        let x = lat.rates.node(j);
        let mut pairs = Vec::new();
        let mut taps = Vec::new();
        let head = inc.survival(i, k + lag_k) * survival_product(&lat, i, x, k, lag_k)?;
        Ok(head + mid_window(&lat, &inc, rate_mean, i, x, k, lag_k, ahead.as_ref(), &mut pairs, &mut taps)?)
    })?;
    Ok(lat.surface(Quantity::ProductMoment { lag: lat.theta(lag_k) }, values))
}

fn check_rate_mean(lat: &Lattice, rate_mean: &MomentSurface) -> Result<()> {
    if rate_mean.quantity != Quantity::RateMean {
        return Err(Error::GridMismatch(format!("expected a rate-mean surface, got {}", rate_mean.quantity.label())));
    }
    if rate_mean.states != lat.m || rate_mean.rates != lat.rates || rate_mean.time.step() != lat.time.step() {
        return Err(Error::GridMismatch("rate-mean surface uses a different lattice".into()));
    }
    Ok(())
}

/// Renewal equation at one point with the first sojourn aged `u`: all
/// convolution terms are explicit since the lattice already holds them.
fn evaluate_with<F>(
    lat: &Lattice,
    surface: &MomentSurface,
    start: BackwardState,
    r: f64,
    k: usize,
    extra: usize,
    source: F,
) -> Result<f64>
where
    F: Fn(&KernelIncrements) -> Result<f64>,
{
    let i = start.state;
    lat.kernel.check_state(i)?;
    lat.check_rate(r)?;
    let inc = KernelIncrements::for_state(lat.kernel, lat.time.step(), k + extra, start)?;
    let mut acc = source(&inc)?;
    if k == 0 {
        return Ok(acc);
    }
    let quantity = match surface.quantity {
        Quantity::ProductMoment { .. } => Quantity::RateMean,
        q => q,
    };
    let mut pairs = Vec::new();
    acc += explicit_convolution(lat, &inc, &surface.values, lat.time.len(), i, k, |l| {
        let mut taps = Vec::new();
        let step = step_at(lat, quantity, i, lat.theta(l))?;
        step_taps(lat, &step, i, r, lat.theta(l), &mut pairs, &mut taps)?;
        Ok(taps)
    })?;
    let step = step_at(lat, quantity, i, 0.0)?;
    let mut taps = Vec::new();
    step_taps(lat, &step, i, r, 0.0, &mut pairs, &mut taps)?;
    for &kk in &lat.successors[i] {
        let w = inc.weight(i, kk, 0, k);
        if w != 0.0 {
            acc += w * apply(&taps, surface.slice(kk, k));
        }
    }
    Ok(acc)
}

fn check_surface(surface: &MomentSurface, expected: fn(&Quantity) -> bool, what: &str) -> Result<()> {
    if !expected(&surface.quantity) {
        return Err(Error::GridMismatch(format!("expected a {what} surface, got {}", surface.quantity.label())));
    }
    Ok(())
}

/// `E[v(0, s)^n | J = i, B = u, r = r]` from a solved surface.
pub fn evaluate_zcb_moment(
    surface: &MomentSurface,
    kernel: &SemiMarkovKernel,
    model: &RegimeRateModel,
    i: usize,
    u: f64,
    r: f64,
    s: f64,
) -> Result<f64> {
    check_surface(surface, |q| matches!(q, Quantity::ZcbMoment { .. }), "bond moment")?;
    let Quantity::ZcbMoment { order } = surface.quantity else { unreachable!() };
    let lat = Lattice::for_surface(kernel, model, surface)?;
    let k = surface.time_index(s)?;
    evaluate_with(&lat, surface, BackwardState::new(i, u), r, k, 0, |inc| {
        Ok(inc.survival(i, k) * lat.model.discounted_family(i, lat.theta(k), order)?.log_bond(r).exp())
    })
}

/// `E[delta(s) | J = i, B = u, r = r]`.
pub fn evaluate_rate_mean(
    surface: &MomentSurface,
    kernel: &SemiMarkovKernel,
    model: &RegimeRateModel,
    i: usize,
    u: f64,
    r: f64,
    s: f64,
) -> Result<f64> {
    check_surface(surface, |q| *q == Quantity::RateMean, "rate-mean")?;
    let lat = Lattice::for_surface(kernel, model, surface)?;
    let k = surface.time_index(s)?;
    evaluate_with(&lat, surface, BackwardState::new(i, u), r, k, 0, |inc| {
        Ok(inc.survival(i, k) * lat.model.law_family(i, lat.theta(k))?.at(r).mean())
    })
}

/// `E[delta(s) delta(s + h) | J = i, B = u, r = r]`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_product_moment(
    product: &MomentSurface,
    rate_mean: &MomentSurface,
    kernel: &SemiMarkovKernel,
    model: &RegimeRateModel,
    i: usize,
    u: f64,
    r: f64,
    s: f64,
) -> Result<f64> {
    check_surface(product, |q| matches!(q, Quantity::ProductMoment { .. }), "product-moment")?;
    let Quantity::ProductMoment { lag } = product.quantity else { unreachable!() };
    let lat = Lattice::for_surface(kernel, model, product)?;
    check_rate_mean(&lat, rate_mean)?;
    let lag_k = lag_steps(&lat, lag)?;
    let k = product.time_index(s)?;
    let ahead = Propagated::wanted(&lat, lag_k).then(|| Propagated::build(&lat, rate_mean, lag_k)).transpose()?;
    evaluate_with(&lat, product, BackwardState::new(i, u), r, k, lag_k, |inc| {
        let (mut pairs, mut taps) = (Vec::new(), Vec::new());
        let head = inc.survival(i, k + lag_k) * survival_product(&lat, i, r, k, lag_k)?;
        Ok(head + mid_window(&lat, inc, rate_mean, i, r, k, lag_k, ahead.as_ref(), &mut pairs, &mut taps)?)
    })
}

/// `Cov[delta(s), delta(s + h) | J = i, B = u, r = r]`, the lag taken from
/// the product surface. `rate_mean` must reach `s + h`.
#[allow(clippy::too_many_arguments)]
pub fn covariance(
    product: &MomentSurface,
    rate_mean: &MomentSurface,
    kernel: &SemiMarkovKernel,
    model: &RegimeRateModel,
    i: usize,
    u: f64,
    r: f64,
    s: f64,
) -> Result<f64> {
    let Quantity::ProductMoment { lag } = product.quantity else {
        return Err(Error::GridMismatch(format!(
            "expected a product-moment surface, got {}",
            product.quantity.label()
        )));
    };
    let xi = evaluate_product_moment(product, rate_mean, kernel, model, i, u, r, s)?;
    let early = evaluate_rate_mean(rate_mean, kernel, model, i, u, r, s)?;
    let late = evaluate_rate_mean(rate_mean, kernel, model, i, u, r, s + lag)?;
    Ok(xi - early * late)
}
