use std::collections::btree_map::Entry;
use std::collections::BTreeMap;

use smrate::moment_engine::{
    evaluate_product_moment, evaluate_rate_mean, evaluate_zcb_moment, solve_product_moment, solve_rate_mean,
    solve_zcb_moment, MomentSurface, SolverConfig,
};
use smrate::monte_carlo::Target;
use smrate::semi_markov::{backward_transition_probabilities, transition_probabilities, TransitionTable};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

/// Solved surfaces and transition tables, looked up by quantity.
pub struct Analytic<'a> {
    config: &'a ExperimentConfig,
    bonds: BTreeMap<u32, MomentSurface>,
    rate_mean: Option<MomentSurface>,
    products: Vec<(f64, MomentSurface)>,
    occupancy: Vec<(f64, TransitionTable)>,
}

/// Product-moment surface for `lag`, tabulated up to `horizon - lag` so
/// that `s + lag` stays within the rate-mean surface.
pub fn product_surface(config: &ExperimentConfig, lag: f64, rate_mean: &MomentSurface) -> Result<MomentSurface> {
    let solver = SolverConfig { horizon: shortened(config, lag)?, ..config.solver };
    Ok(solve_product_moment(lag, rate_mean, &config.kernel, &config.model, &solver)?)
}

fn shortened(config: &ExperimentConfig, lag: f64) -> Result<f64> {
    let grid = config.time_grid()?;
    let lag_k =
        grid.index_of(lag).ok_or_else(|| CliError::Config(format!("lag {lag} is not a node of the solver grid")))?;
    Ok(grid.time(grid.steps() - lag_k))
}

impl<'a> Analytic<'a> {
    pub fn new(config: &'a ExperimentConfig) -> Self {
        Self { config, bonds: BTreeMap::new(), rate_mean: None, products: Vec::new(), occupancy: Vec::new() }
    }

    /// Solves what `targets` need.
    pub fn prepare(&mut self, targets: &[Target]) -> Result<()> {
        let cfg = self.config;
        for target in targets {
            match *target {
                Target::ZcbMoment { order, .. } => {
                    if let Entry::Vacant(slot) = self.bonds.entry(order) {
                        slot.insert(solve_zcb_moment(order, &cfg.kernel, &cfg.model, &cfg.solver)?);
                    }
                }
                Target::RateMean { .. } => self.ensure_rate_mean()?,
                Target::ProductMoment { lag, .. } => {
                    self.ensure_rate_mean()?;
                    if self.product(lag).is_none() {
                        let surface = product_surface(cfg, lag, self.rate_mean.as_ref().expect("solved above"))?;
                        self.products.push((lag, surface));
                    }
                }
                Target::StateProbability { backward, .. } => {
                    if !self.occupancy.iter().any(|(u, _)| *u == backward) {
                        let phi = transition_probabilities(&cfg.kernel, &cfg.time_grid()?)?;
                        let table = if backward == 0.0 {
                            phi
                        } else {
                            backward_transition_probabilities(&cfg.kernel, backward, &phi)?
                        };
                        self.occupancy.push((backward, table));
                    }
                }
            }
        }
        Ok(())
    }

    fn ensure_rate_mean(&mut self) -> Result<()> {
        if self.rate_mean.is_none() {
            self.rate_mean = Some(solve_rate_mean(&self.config.kernel, &self.config.model, &self.config.solver)?);
        }
        Ok(())
    }

    fn product(&self, lag: f64) -> Option<&MomentSurface> {
        let tol = 1e-9 * self.config.solver.step;
        self.products.iter().find(|(l, _)| (l - lag).abs() <= tol).map(|(_, s)| s)
    }

    /// Value of a prepared target.
    pub fn value(&self, target: &Target) -> Result<f64> {
        let (kernel, model) = (&self.config.kernel, &self.config.model);
        let missing = || CliError::Config(format!("no surface prepared for {target:?}"));
        Ok(match *target {
            Target::ZcbMoment { state, backward, r0, order, maturity } => {
                let surface = self.bonds.get(&order).ok_or_else(missing)?;
                evaluate_zcb_moment(surface, kernel, model, state, backward, r0, maturity)?
            }
            Target::RateMean { state, backward, r0, time } => {
                let surface = self.rate_mean.as_ref().ok_or_else(missing)?;
                evaluate_rate_mean(surface, kernel, model, state, backward, r0, time)?
            }
            Target::ProductMoment { state, backward, r0, time, lag } => {
                let product = self.product(lag).ok_or_else(missing)?;
                let rate_mean = self.rate_mean.as_ref().ok_or_else(missing)?;
                evaluate_product_moment(product, rate_mean, kernel, model, state, backward, r0, time)?
            }
            Target::StateProbability { state, backward, target_state, time } => {
                let (_, table) = self.occupancy.iter().find(|(u, _)| *u == backward).ok_or_else(missing)?;
                let k = table.grid().index_of(time).ok_or_else(missing)?;
                table.get(state, target_state, k)
            }
        })
    }
}
