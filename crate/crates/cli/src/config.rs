use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};
use smrate::moment_engine::{RateGrid, SolverConfig};
use smrate::monte_carlo::MIN_REPLICATIONS;
use smrate::rate_models::RegimeRateModel;
use smrate::semi_markov::{BackwardState, SemiMarkovKernel, TimeGrid};

use crate::error::{CliError, Result};

/// One self-describing experiment: the model, the solver lattice and the
/// parameters of every command.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kernel: SemiMarkovKernel,
    pub model: RegimeRateModel,
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
    /// Output directory when `--out` is not given.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub phi: PhiSection,
    #[serde(default)]
    pub moments: MomentsSection,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub validate: Option<ValidateSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiSection {
    /// Age of the initial sojourn for the backward table.
    #[serde(default)]
    pub backward: f64,
}

fn default_orders() -> Vec<u32> {
    vec![1, 2]
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsSection {
    #[serde(default = "default_orders")]
    pub orders: Vec<u32>,
    #[serde(default = "yes")]
    pub rate_mean: bool,
    /// Lags of the product-moment and covariance surfaces.
    #[serde(default)]
    pub lags: Vec<f64>,
}

impl Default for MomentsSection {
    fn default() -> Self {
        Self { orders: default_orders(), rate_mean: true, lags: Vec::new() }
    }
}

/// Points at which Monte Carlo is compared with the solvers.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Targets {
    pub starts: Vec<BackwardState>,
    pub r0: f64,
    #[serde(default)]
    pub orders: Vec<u32>,
    #[serde(default)]
    pub maturities: Vec<f64>,
    /// Times of the rate mean; each is paired with every lag.
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default)]
    pub lags: Vec<f64>,
}

fn default_mc_step() -> f64 {
    0.005
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub replications: usize,
    #[serde(default = "default_mc_step")]
    pub step: f64,
    #[serde(default)]
    pub antithetic: bool,
    /// Paths dumped per start.
    #[serde(default = "one")]
    pub paths: usize,
    /// Horizon of the dumped paths; the solver horizon by default.
    #[serde(default)]
    pub horizon: Option<f64>,
    pub targets: Targets,
}

fn default_threshold() -> f64 {
    3.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    #[serde(default = "default_threshold")]
    pub z_threshold: f64,
    pub bond_replications: usize,
    pub rate_replications: usize,
    #[serde(default)]
    pub occupancy_replications: usize,
    #[serde(default)]
    pub occupancy_times: Vec<f64>,
    #[serde(default = "default_mc_step")]
    pub step: f64,
    #[serde(default)]
    pub antithetic: bool,
    pub targets: Targets,
}

/// A parsed config with the digest of its source bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub sha256: String,
}

pub fn load(path: &Path) -> Result<LoadedConfig> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let sha256 = hex::encode(Sha256::digest(&bytes));
    let config = parse(&bytes).map_err(|message| CliError::Parse { path: path.into(), message })?;
    config.check()?;
    Ok(LoadedConfig { config, sha256 })
}

/// Parses JSON, naming the offending field and position on failure.
pub fn parse(bytes: &[u8]) -> std::result::Result<ExperimentConfig, String> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path.is_empty() || path == "." {
            inner.to_string()
        } else {
            format!("field `{path}`: {inner}")
        }
    })
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    /// Cross-field checks that need no numerics.
    pub fn check(&self) -> Result<()> {
        let m = self.kernel.state_count();
        self.model.validate().map_err(|e| invalid(e.to_string()))?;
        if self.model.state_count() != m {
            return Err(invalid(format!("kernel has {m} states but the rate model has {}", self.model.state_count())));
        }
        self.solver.validate().map_err(|e| invalid(e.to_string()))?;
        self.time_grid()?;
        if !(self.phi.backward.is_finite() && self.phi.backward >= 0.0) {
            return Err(invalid(format!("phi.backward must be >= 0, got {}", self.phi.backward)));
        }
        check_orders("moments.orders", &self.moments.orders)?;
        for &lag in &self.moments.lags {
            self.check_lag("moments.lags", lag)?;
        }
        if let Some(sim) = &self.simulate {
            check_replications("simulate.replications", sim.replications)?;
            self.check_sampling("simulate", sim.step, sim.antithetic, sim.replications)?;
            if let Some(h) = sim.horizon {
                if !(h.is_finite() && h >= 0.0) {
                    return Err(invalid(format!("simulate.horizon must be >= 0, got {h}")));
                }
            }
            self.check_targets("simulate.targets", &sim.targets)?;
        }
        if let Some(val) = &self.validate {
            if !(val.z_threshold >= 0.0) {
                return Err(invalid(format!("validate.z_threshold must be >= 0, got {}", val.z_threshold)));
            }
            check_replications("validate.bond_replications", val.bond_replications)?;
            check_replications("validate.rate_replications", val.rate_replications)?;
            self.check_sampling("validate", val.step, val.antithetic, val.bond_replications)?;
            self.check_sampling("validate", val.step, val.antithetic, val.rate_replications)?;
            self.check_targets("validate.targets", &val.targets)?;
            if !val.occupancy_times.is_empty() {
                check_replications("validate.occupancy_replications", val.occupancy_replications)?;
                for &t in &val.occupancy_times {
                    self.check_time("validate.occupancy_times", t)?;
                }
            }
        }
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.solver.step, self.solver.horizon).map_err(|e| invalid(format!("solver: {e}")))
    }

    pub fn rate_grid(&self) -> Result<RateGrid> {
        RateGrid::for_model(&self.model, &self.solver.rate_grid).map_err(|e| invalid(format!("solver.rate_grid: {e}")))
    }

    /// A time on the solver grid, within its horizon.
    fn check_time(&self, what: &str, t: f64) -> Result<()> {
        let grid = self.time_grid()?;
        if !(t.is_finite() && t >= 0.0) || grid.index_of(t).is_none() {
            return Err(invalid(format!(
                "{what}: {t} is not a node of the solver grid (step {}, horizon {})",
                grid.step(),
                grid.horizon()
            )));
        }
        Ok(())
    }

    fn check_lag(&self, what: &str, lag: f64) -> Result<()> {
        self.check_time(what, lag)
    }

    fn check_sampling(&self, what: &str, step: f64, antithetic: bool, replications: usize) -> Result<()> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(invalid(format!("{what}.step must be positive, got {step}")));
        }
        if antithetic {
            if !self.model.is_gaussian() {
                return Err(invalid(format!("{what}: antithetic sampling needs a Gaussian rate model")));
            }
            if !replications.is_multiple_of(2) {
                return Err(invalid(format!("{what}: antithetic sampling needs even replication counts")));
            }
        }
        Ok(())
    }

    fn check_targets(&self, what: &str, targets: &Targets) -> Result<()> {
        if targets.starts.is_empty() {
            return Err(invalid(format!("{what}.starts is empty")));
        }
        for start in &targets.starts {
            start.conditioning(&self.kernel).map_err(|e| invalid(format!("{what}.starts: {e}")))?;
        }
        let rates = self.rate_grid()?;
        if !rates.contains(targets.r0) {
            return Err(invalid(format!(
                "{what}.r0 = {} lies outside the rate lattice [{}, {}]",
                targets.r0,
                rates.lower(),
                rates.upper()
            )));
        }
        check_orders(&format!("{what}.orders"), &targets.orders)?;
        for &s in &targets.maturities {
            self.check_time(&format!("{what}.maturities"), s)?;
        }
        for &t in &targets.times {
            self.check_time(&format!("{what}.times"), t)?;
        }
        for &lag in &targets.lags {
            self.check_lag(&format!("{what}.lags"), lag)?;
        }
        for &t in &targets.times {
            for &lag in &targets.lags {
                self.check_time(&format!("{what}: time {t} plus lag {lag}"), t + lag)?;
            }
        }
        Ok(())
    }
}

fn check_orders(what: &str, orders: &[u32]) -> Result<()> {
    if orders.contains(&0) {
        return Err(invalid(format!("{what}: moment orders start at 1")));
    }
    Ok(())
}

fn check_replications(what: &str, n: usize) -> Result<()> {
    if n < MIN_REPLICATIONS {
        return Err(invalid(format!("{what} must be at least {MIN_REPLICATIONS}, got {n}")));
    }
    Ok(())
}
