//! Semi-Markov regime process: kernel, transition probabilities and path sampling.

mod grid;
mod kernel;
mod sampling;
mod sojourn;
mod transition;

pub use grid::TimeGrid;
pub use kernel::{BackwardState, SemiMarkovKernel};
pub use sampling::{sample_markov_renewal_path, sample_sojourn, state_at, MarkovRenewalPath, Renewal};
pub use sojourn::SojournDistribution;
pub use transition::{
    backward_transition_probabilities, transition_probabilities, KernelIncrements, TransitionTable, MAX_ROW_DRIFT,
};
