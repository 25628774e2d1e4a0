//! Moment surfaces of the discount factor and the short rate from the
//! renewal equations of the regime-switching model.

mod grid;
mod solver;
mod surface;

pub use grid::{Coupling, RateGrid, RateGridSpec, SolverConfig};
pub use solver::{
    covariance, evaluate_product_moment, evaluate_rate_mean, evaluate_zcb_moment, solve_product_moment,
    solve_rate_mean, solve_zcb_moment,
};
pub use surface::{MomentSurface, Quantity, SurfaceTable};
