//! Simulation of the regime-switching short rate with exact transitions,
//! and Monte Carlo estimators for every quantity the solvers compute.

mod estimate;
mod path;
mod rng;

pub use estimate::{
    estimate_rate_moment_grid, estimate_rate_moments, estimate_state_probabilities, estimate_zcb_moment,
    estimate_zcb_moments, EstimatorReport, McConfig, Target, MIN_REPLICATIONS,
};
pub use path::{simulate_path, PathRecord};
pub use rng::RngStream;
