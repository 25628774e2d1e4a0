use rand::Rng;
use serde::Serialize;

use super::kernel::{BackwardState, SemiMarkovKernel};
use super::sojourn::invert_decreasing;
use crate::error::{Error, Result};

/// One record `(J_n, T_n)` of a Markov renewal path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Renewal {
    pub state: usize,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkovRenewalPath {
    pub start: BackwardState,
    /// Starts with `(J_0, 0)`; the present is time zero.
    pub records: Vec<Renewal>,
    /// The last visited state is absorbing; no record reaches the horizon.
    pub absorbed: bool,
}

/// Draws the next `(state, sojourn)` from `state` with age `age`.
///
/// For `age == 0` this samples `J` from the embedded chain and then the
/// sojourn from `G_{iJ}`. Otherwise the sojourn comes from the conditional law
/// `P(W <= w) = [H_i(u+w) - H_i(u)] / [1 - H_i(u)]` by inverting the survival,
/// and the next state from weights `dQ_ik(u + w)`.
/// Returns `None` for an absorbing state.
pub fn sample_sojourn<R: Rng + ?Sized>(
    kernel: &SemiMarkovKernel,
    state: usize,
    age: f64,
    rng: &mut R,
) -> Result<Option<(usize, f64)>> {
    if kernel.is_absorbing(state) {
        return Ok(None);
    }
    if age == 0.0 {
        let pick: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = None;
        for (j, p, law) in kernel.successors(state) {
            acc += p;
            chosen = Some((j, law));
            if pick < acc {
                break;
            }
        }
        let (j, law) = chosen.expect("non-absorbing state has a successor");
        let v = 1.0 - rng.random::<f64>();
        return Ok(Some((j, law.inverse_sf(v)?)));
    }

    let base = BackwardState::new(state, age).conditioning(kernel)?;
    let v = 1.0 - rng.random::<f64>();
    let target = v * base;
    let end = invert_decreasing(|t| kernel.survival(state, t), target, age, kernel.mean_sojourn(state))?;
    let wait = end - age;

    let weights: Vec<(usize, f64)> =
        kernel.successors(state).map(|(j, _, _)| (j, kernel.q_dot(state, j, end))).collect();
    let mut total: f64 = weights.iter().map(|w| w.1).sum();
    let weights = if total > 0.0 && total.is_finite() {
        weights
    } else {
        // Density vanishes or blows up exactly at `end` (e.g. a uniform
        // edge): fall back to local kernel increments.
        let eps = 1e-9 * end.max(1.0);
        let local: Vec<(usize, f64)> = kernel
            .successors(state)
            .map(|(j, _, _)| (j, kernel.q_increment(state, j, (end - eps).max(age), end + eps)))
            .collect();
        total = local.iter().map(|w| w.1).sum();
        if !(total > 0.0) {
            return Err(Error::NumericalRoot {
                target,
                lower: age,
                upper: end,
                reason: "no kernel mass at the sampled exit time".into(),
            });
        }
        local
    };
    let pick = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut next = weights[weights.len() - 1].0;
    for (j, w) in &weights {
        acc += w;
        if pick < acc {
            next = *j;
            break;
        }
    }
    Ok(Some((next, wait)))
}

/// Samples `(J_n, T_n)` until the last jump time reaches `horizon`.
pub fn sample_markov_renewal_path<R: Rng + ?Sized>(
    kernel: &SemiMarkovKernel,
    start: BackwardState,
    horizon: f64,
    rng: &mut R,
) -> Result<MarkovRenewalPath> {
    start.conditioning(kernel)?;
    if !(horizon >= 0.0) {
        return Err(Error::invalid(format!("horizon must be >= 0, got {horizon}")));
    }
    let mut records = vec![Renewal { state: start.state, time: 0.0 }];
    let mut age = start.backward;
    let mut absorbed = false;
    while records.last().unwrap().time < horizon {
        let last = *records.last().unwrap();
        match sample_sojourn(kernel, last.state, age, rng)? {
            Some((next, wait)) => {
                // A zero wait would break strict monotonicity; the laws are
                // continuous so this only happens on underflow.
                let time = last.time + wait.max(f64::MIN_POSITIVE);
                let time = if time > last.time { time } else { next_up(last.time) };
                records.push(Renewal { state: next, time });
            }
            None => {
                absorbed = true;
                break;
            }
        }
        age = 0.0;
    }
    Ok(MarkovRenewalPath { start, records, absorbed })
}

fn next_up(x: f64) -> f64 {
    f64::from_bits(x.to_bits() + 1)
}

/// State occupied at time `t` along a sampled path.
pub fn state_at(path: &MarkovRenewalPath, t: f64) -> usize {
    let pos = path.records.partition_point(|r| r.time <= t);
    path.records[pos.saturating_sub(1)].state
}
