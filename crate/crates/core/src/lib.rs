pub mod error;
pub mod moment_engine;
pub mod monte_carlo;
pub mod quadrature;
pub mod rate_models;
pub mod semi_markov;

pub use error::{Error, Result};
