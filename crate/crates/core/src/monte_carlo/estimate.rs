use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::path::{check_inputs, uniform_nodes, walk};
use super::rng::RngStream;
use crate::error::{Error, Result};
use crate::rate_models::RegimeRateModel;
use crate::semi_markov::{sample_markov_renewal_path, state_at, BackwardState, SemiMarkovKernel};

/// Smallest accepted replication count.
pub const MIN_REPLICATIONS: usize = 100;

/// Replications per deterministic reduction chunk.
const CHUNK: usize = 512;

fn default_step() -> f64 {
    0.005
}

/// Replication settings shared by the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub replications: usize,
    pub seed: u64,
    /// Grid step for the trapezoidal integral of the rate.
    #[serde(default = "default_step")]
    pub step: f64,
    /// Pair each path with its mirror image in the Gaussian innovations.
    #[serde(default)]
    pub antithetic: bool,
}

impl McConfig {
    pub fn new(replications: usize, seed: u64) -> Self {
        Self { replications, seed, step: default_step(), antithetic: false }
    }

    fn validate(&self, model: &RegimeRateModel) -> Result<()> {
        if self.replications < MIN_REPLICATIONS {
            return Err(Error::invalid(format!(
                "need at least {MIN_REPLICATIONS} replications, got {}",
                self.replications
            )));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid(format!("step must be positive, got {}", self.step)));
        }
        if self.antithetic {
            if !model.is_gaussian() {
                return Err(Error::Unsupported { model: model.kind_name(), operation: "antithetic variates" });
            }
            if !self.replications.is_multiple_of(2) {
                return Err(Error::invalid("antithetic sampling needs an even number of replications"));
            }
        }
        Ok(())
    }

    /// Independent sampling units: paths, or antithetic pairs.
    fn units(&self) -> usize {
        if self.antithetic {
            self.replications / 2
        } else {
            self.replications
        }
    }
}

/// What an [`EstimatorReport`] estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "quantity", rename_all = "snake_case")]
pub enum Target {
    ZcbMoment { state: usize, backward: f64, r0: f64, order: u32, maturity: f64 },
    RateMean { state: usize, backward: f64, r0: f64, time: f64 },
    ProductMoment { state: usize, backward: f64, r0: f64, time: f64, lag: f64 },
    StateProbability { state: usize, backward: f64, target_state: usize, time: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorReport {
    #[serde(flatten)]
    pub target: Target,
    pub estimate: f64,
    /// Sample standard deviation of the sampling units over the square root
    /// of their number.
    pub std_error: f64,
    pub replications: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl EstimatorReport {
    /// `(estimate - reference) / std_error`; zero when both coincide exactly.
    /// The standard error is floored at the rounding level of the estimate,
    /// which it reaches when antithetic pairs cancel exactly.
    pub fn z_score(&self, reference: f64) -> f64 {
        let diff = self.estimate - reference;
        if diff == 0.0 {
            0.0
        } else {
            diff / self.std_error.max(64.0 * f64::EPSILON * self.estimate.abs().max(reference.abs()))
        }
    }
}

/// Running mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let d = x - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, other: &Welford) {
        if other.count == 0.0 {
            return;
        }
        let count = self.count + other.count;
        let d = other.mean - self.mean;
        self.mean += d * other.count / count;
        self.m2 += other.m2 + d * d * self.count * other.count / count;
        self.count = count;
    }

    fn std_error(&self) -> f64 {
        if self.count < 2.0 {
            return f64::NAN;
        }
        (self.m2.max(0.0) / (self.count - 1.0) / self.count).sqrt()
    }
}

/// Runs `units` sampling units, unit `k` on stream `k`, and reduces the
/// per-target statistics chunk by chunk in index order so the result does
/// not depend on scheduling.
fn replicate<F>(units: usize, seed: u64, targets: usize, sample: F) -> Result<Vec<Welford>>
where
    F: Fn(&mut RngStream, &mut [f64]) -> Result<()> + Sync,
{
    let chunks = units.div_ceil(CHUNK);
    let partial: Vec<Vec<Welford>> = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<Vec<Welford>> {
            let mut acc = vec![Welford::default(); targets];
            let mut values = vec![0.0; targets];
            for unit in c * CHUNK..((c + 1) * CHUNK).min(units) {
                let mut rng = RngStream::new(seed, unit as u64);
                sample(&mut rng, &mut values)?;
                for (a, &v) in acc.iter_mut().zip(&values) {
                    a.push(v);
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![Welford::default(); targets];
    for chunk in &partial {
        for (t, c) in total.iter_mut().zip(chunk) {
            t.merge(c);
        }
    }
    Ok(total)
}

/// Walks one sampling unit through `grid`: a single path, or an antithetic
/// pair sharing the regime path. `record` adds each path's contribution and
/// pairs are averaged.
#[allow(clippy::too_many_arguments)]
fn sample_unit(
    kernel: &SemiMarkovKernel,
    model: &RegimeRateModel,
    start: BackwardState,
    r0: f64,
    grid: &[f64],
    antithetic: bool,
    rng: &mut RngStream,
    values: &mut [f64],
    mut record: impl FnMut(usize, f64, f64, &mut [f64]),
) -> Result<()> {
    let horizon = grid.last().copied().unwrap_or(0.0);
    let regime = sample_markov_renewal_path(kernel, start, horizon, rng)?;
    values.fill(0.0);
    let signs: &[f64] = if antithetic { &[1.0, -1.0] } else { &[1.0] };
    for &sign in signs {
        let mut local = rng.clone();
        walk(model, &regime, r0, grid, sign, &mut local, |v| {
            if let Some(g) = v.grid {
                record(g, v.rate, v.integral, values);
            }
        })?;
    }
    let scale = 1.0 / signs.len() as f64;
    values.iter_mut().for_each(|v| *v *= scale);
    Ok(())
}

fn sorted_grid(points: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut grid: Vec<f64> = points.into_iter().collect();
    grid.push(0.0);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

fn check_times(times: &[f64], what: &str) -> Result<()> {
    if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(Error::invalid(format!("{what} must be >= 0, got {t}")));
    }
    Ok(())
}

fn position(grid: &[f64], t: f64) -> usize {
    grid.binary_search_by(|g| g.total_cmp(&t)).expect("time is on the grid")
}

/// `E[v(0, s)^n]` for every order and maturity from common paths.
#[allow(clippy::too_many_arguments)]
pub fn estimate_zcb_moments(
    kernel: &SemiMarkovKernel,
    model: &RegimeRateModel,
    start: BackwardState,
    r0: f64,
    orders: &[u32],
    maturities: &[f64],
    config: &McConfig,
) -> Result<Vec<EstimatorReport>> {
    check_inputs(kernel, model, start, r0)?;
    config.validate(model)?;
    check_times(maturities, "maturities")?;
    if orders.contains(&0) {
        return Err(Error::invalid("moment order must be at least 1"));
    }
    let horizon = maturities.iter().copied().fold(0.0, f64::max);
    let grid = sorted_grid(uniform_nodes(config.step, horizon).into_iter().chain(maturities.iter().copied()));
    let slots: Vec<usize> = maturities.iter().map(|&s| position(&grid, s)).collect();
    let targets = orders.len() * maturities.len();
    let record = |g: usize, _: f64, integral: f64, values: &mut [f64]| {
        for (m, _) in slots.iter().enumerate().filter(|(_, &slot)| slot == g) {
            for (o, &n) in orders.iter().enumerate() {
                values[o * maturities.len() + m] += (-(n as f64) * integral).exp();
            }
        }
    };
    let stats = replicate(config.units(), config.seed, targets, |rng, values| {
        sample_unit(kernel, model, start, r0, &grid, config.antithetic, rng, values, record)
    })?;
    let mut out = Vec::with_capacity(targets);
    for (o, &order) in orders.iter().enumerate() {
        for (m, &maturity) in maturities.iter().enumerate() {
            let target = Target::ZcbMoment { state: start.state, backward: start.backward, r0, order, maturity };
            out.push(report(target, &stats[o * maturities.len() + m], config));
        }
    }
    Ok(out)
}

fn report(target: Target, stats: &Welford, config: &McConfig) -> EstimatorReport {
    EstimatorReport {
        target,
        estimate: stats.mean,
        std_error: stats.std_error(),
        replications: config.replications,
        seed: config.seed,
        antithetic: config.antithetic,
    }
}

/// `E[v(0, s)^n | J = i, B = u, r = r0]` by Monte Carlo.
#[allow(clippy::too_many_arguments)]
pub fn estimate_zcb_moment(
    kernel: &SemiMarkovKernel,
    model: &RegimeRateModel,
    start: BackwardState,
    r0: f64,
    n: u32,
    s: f64,
    reps: usize,
    seed: u64,
) -> Result<EstimatorReport> {
    let mut out = estimate_zcb_moments(kernel, model, start, r0, &[n], &[s], &McConfig::new(reps, seed))?;
    Ok(out.remove(0))
}

/// `(E[delta(s)], E[delta(s) delta(s + h)])` for every `(s, h)`, sampling
/// the rate exactly at the requested times and the jump times only.
pub fn estimate_rate_moment_grid(
    kernel: &SemiMarkovKernel,
    model: &RegimeRateModel,
    start: BackwardState,
    r0: f64,
    points: &[(f64, f64)],
    config: &McConfig,
) -> Result<Vec<(EstimatorReport, EstimatorReport)>> {
    check_inputs(kernel, model, start, r0)?;
    config.validate(model)?;
    let times: Vec<f64> = points.iter().flat_map(|&(s, h)| [s, h]).collect();
    check_times(&times, "times and lags")?;
    let grid = sorted_grid(points.iter().flat_map(|&(s, h)| [s, s + h]));
    let pairs: Vec<(usize, usize)> =
        points.iter().map(|&(s, h)| (position(&grid, s), position(&grid, s + h))).collect();
    let stats = replicate(config.units(), config.seed, 2 * points.len(), |rng, values| {
        let mut rates = vec![0.0; grid.len()];
        sample_unit(kernel, model, start, r0, &grid, config.antithetic, rng, values, |g, rate, _, values| {
            rates[g] = rate;
            if g + 1 == grid.len() {
                for (p, &(a, b)) in pairs.iter().enumerate() {
                    values[2 * p] += rates[a];
                    values[2 * p + 1] += rates[a] * rates[b];
                }
            }
        })
    })?;
    Ok(points
        .iter()
        .enumerate()
        .map(|(p, &(time, lag))| {
            let (state, backward) = (start.state, start.backward);
            (
                report(Target::RateMean { state, backward, r0, time }, &stats[2 * p], config),
                report(Target::ProductMoment { state, backward, r0, time, lag }, &stats[2 * p + 1], config),
            )
        })
        .collect())
}

/// `(E[delta(s)], E[delta(s) delta(s + h)])` by Monte Carlo.
#[allow(clippy::too_many_arguments)]
pub fn estimate_rate_moments(
    kernel: &SemiMarkovKernel,
    model: &RegimeRateModel,
    start: BackwardState,
    r0: f64,
    s: f64,
    h: f64,
    reps: usize,
    seed: u64,
) -> Result<(EstimatorReport, EstimatorReport)> {
    let mut out = estimate_rate_moment_grid(kernel, model, start, r0, &[(s, h)], &McConfig::new(reps, seed))?;
    Ok(out.remove(0))
}

/// Occupation probabilities `P(Z(t) = j | J = i, B = u)` for every time and
/// state, the oracle for the (backward) transition probabilities.
pub fn estimate_state_probabilities(
    kernel: &SemiMarkovKernel,
    start: BackwardState,
    times: &[f64],
    config: &McConfig,
) -> Result<Vec<EstimatorReport>> {
    start.conditioning(kernel)?;
    check_times(times, "times")?;
    if config.replications < MIN_REPLICATIONS {
        return Err(Error::invalid(format!(
            "need at least {MIN_REPLICATIONS} replications, got {}",
            config.replications
        )));
    }
    let m = kernel.state_count();
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let stats = replicate(config.replications, config.seed, times.len() * m, |rng, values| {
        let path = sample_markov_renewal_path(kernel, start, horizon, rng)?;
        values.fill(0.0);
        for (k, &t) in times.iter().enumerate() {
            values[k * m + state_at(&path, t)] = 1.0;
        }
        Ok(())
    })?;
    let config = McConfig { antithetic: false, ..*config };
    let mut out = Vec::with_capacity(times.len() * m);
    for (k, &time) in times.iter().enumerate() {
        for j in 0..m {
            let target =
                Target::StateProbability { state: start.state, backward: start.backward, target_state: j, time };
            out.push(report(target, &stats[k * m + j], &config));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_merge_matches_direct() {
        let xs: Vec<f64> = (0..1000).map(|k| ((k * 37) % 101) as f64 / 7.0).collect();
        let mut all = Welford::default();
        xs.iter().for_each(|&x| all.push(x));
        let mut merged = Welford::default();
        for chunk in xs.chunks(123) {
            let mut c = Welford::default();
            chunk.iter().for_each(|&x| c.push(x));
            merged.merge(&c);
        }
        let mean = xs.iter().sum::<f64>() / 1000.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 999.0;
        assert!((merged.mean - mean).abs() < 1e-12);
        assert!((merged.std_error() - (var / 1000.0).sqrt()).abs() < 1e-12);
        assert!((all.std_error() - merged.std_error()).abs() < 1e-12);
    }

    #[test]
    fn z_score_of_exact_agreement_is_zero() {
        let r = EstimatorReport {
            target: Target::RateMean { state: 0, backward: 0.0, r0: 0.0, time: 0.0 },
            estimate: 1.0,
            std_error: 0.0,
            replications: 100,
            seed: 0,
            antithetic: false,
        };
        assert_eq!(r.z_score(1.0), 0.0);
        assert!(r.z_score(0.5).abs() > 1e12);
    }

    #[test]
    fn z_score_ignores_rounding_below_the_standard_error_floor() {
        let r = EstimatorReport {
            target: Target::RateMean { state: 0, backward: 0.0, r0: 0.0, time: 0.0 },
            estimate: 0.036321205588,
            std_error: 2.3e-20,
            replications: 100,
            seed: 0,
            antithetic: true,
        };
        assert!(r.z_score(0.036321205588 + 7e-18).abs() < 1.0);
        assert!(r.z_score(0.0364).abs() > 1e6);
    }
}
