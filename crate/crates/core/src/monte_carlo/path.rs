use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::rng::RngStream;
use crate::error::{Error, Result};
use crate::rate_models::{RegimeRateModel, TransitionLaw};
use crate::semi_markov::{sample_markov_renewal_path, BackwardState, MarkovRenewalPath, Renewal, SemiMarkovKernel};

/// One simulated trajectory of the regime and the short rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRecord {
    pub start: BackwardState,
    pub r0: f64,
    pub seed: u64,
    pub stream: u64,
    /// `(J_n, T_n)` up to the horizon, starting with `(J_0, 0)`.
    pub jumps: Vec<Renewal>,
    /// Uniform nodes merged with every jump time.
    pub times: Vec<f64>,
    /// State occupied from each node on.
    pub states: Vec<usize>,
    pub rates: Vec<f64>,
    /// Trapezoidal `int_0^t r`.
    pub integral: Vec<f64>,
}

impl PathRecord {
    /// Rows `(t, state, r, I)`.
    pub fn rows(&self) -> impl Iterator<Item = (f64, usize, f64, f64)> + '_ {
        (0..self.times.len()).map(|k| (self.times[k], self.states[k], self.rates[k], self.integral[k]))
    }
}

/// Draws `r(t + dt)` from the exact law; `sign = -1` mirrors the Gaussian
/// innovation for antithetic pairs.
fn exact_draw<R: Rng + ?Sized>(
    model: &RegimeRateModel,
    state: usize,
    r: f64,
    clock: f64,
    dt: f64,
    sign: f64,
    rng: &mut R,
) -> Result<f64> {
    Ok(match model.transition_law_between(state, r, clock, dt)? {
        TransitionLaw::Gaussian { mean, variance } => {
            let z: f64 = StandardNormal.sample(rng);
            mean + sign * variance.sqrt() * z
        }
        law => law.sample(rng),
    })
}

/// Node visited by [`walk`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct Visit {
    pub time: f64,
    /// Index into the requested grid, `None` at a jump time off the grid.
    pub grid: Option<usize>,
    pub state: usize,
    pub rate: f64,
    pub integral: f64,
}

fn same_time(a: f64, b: f64) -> bool {
    a.is_finite() && b.is_finite() && (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Evolves the rate along a regime path through the sorted `grid` and all
/// jump times before its last node, with exact transitions between
/// consecutive nodes. The rate is carried unchanged across each jump, and
/// the diffusion clock of a regime restarts at its entry (the present for
/// the initial regime).
pub(crate) fn walk<R: Rng + ?Sized>(
    model: &RegimeRateModel,
    path: &MarkovRenewalPath,
    r0: f64,
    grid: &[f64],
    sign: f64,
    rng: &mut R,
    mut visit: impl FnMut(Visit),
) -> Result<()> {
    let mut t = 0.0;
    let mut r = r0;
    let mut integral = 0.0;
    let mut state = path.records[0].state;
    let mut entry = 0.0;
    let mut jump = 1;
    let mut g = 0;
    while g < grid.len() {
        let next_grid = grid[g];
        let next_jump = path.records.get(jump).map_or(f64::INFINITY, |rec| rec.time);
        let target = next_grid.min(next_jump);
        if target > t {
            let dt = target - t;
            let next = exact_draw(model, state, r, t - entry, dt, sign, rng)?;
            integral += 0.5 * (r + next) * dt;
            r = next;
            t = target;
        }
        let on_grid = next_grid <= target || same_time(next_grid, target);
        if next_jump <= target || same_time(next_jump, target) {
            state = path.records[jump].state;
            entry = t;
            jump += 1;
        }
        visit(Visit { time: t, grid: on_grid.then_some(g), state, rate: r, integral });
        if on_grid {
            g += 1;
        }
    }
    Ok(())
}

/// Uniform nodes `0, step, ..., horizon`, the last one landing on `horizon`.
pub(crate) fn uniform_nodes(step: f64, horizon: f64) -> Vec<f64> {
    let mut nodes: Vec<f64> =
        (0..).map(|k| k as f64 * step).take_while(|&t| t < horizon && !same_time(t, horizon)).collect();
    nodes.push(horizon);
    nodes
}

pub(crate) fn check_inputs(
    kernel: &SemiMarkovKernel,
    model: &RegimeRateModel,
    start: BackwardState,
    r0: f64,
) -> Result<()> {
    model.validate()?;
    if kernel.state_count() != model.state_count() {
        return Err(Error::invalid(format!(
            "kernel has {} states but the rate model has {}",
            kernel.state_count(),
            model.state_count()
        )));
    }
    start.conditioning(kernel)?;
    if !r0.is_finite() {
        return Err(Error::invalid(format!("initial rate must be finite, got {r0}")));
    }
    Ok(())
}

/// Simulates the regime and the rate up to `horizon` on a grid of `step`,
/// refined to include every jump time.
pub fn simulate_path(
    kernel: &SemiMarkovKernel,
    model: &RegimeRateModel,
    start: BackwardState,
    r0: f64,
    horizon: f64,
    step: f64,
    rng: &mut RngStream,
) -> Result<PathRecord> {
    check_inputs(kernel, model, start, r0)?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!("step must be positive, got {step}")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!("horizon must be >= 0, got {horizon}")));
    }
    let (seed, stream) = (rng.seed(), rng.stream());
    let regime = sample_markov_renewal_path(kernel, start, horizon, rng)?;
    let grid = uniform_nodes(step, horizon);
    let mut record = PathRecord {
        start,
        r0,
        seed,
        stream,
        jumps: regime.records.iter().copied().filter(|rec| rec.time <= horizon).collect(),
        times: Vec::new(),
        states: Vec::new(),
        rates: Vec::new(),
        integral: Vec::new(),
    };
    walk(model, &regime, r0, &grid, 1.0, rng, |v| {
        record.times.push(v.time);
        record.states.push(v.state);
        record.rates.push(v.rate);
        record.integral.push(v.integral);
    })?;
    Ok(record)
}
