//! Model definition: parameters, potential, Hamiltonians and the exact
//! invariant measure.

mod gibbs;
mod observable;
mod params;
mod potential;
mod state;

pub use gibbs::{Estimate, GibbsReference};
pub use observable::Observable;
pub use params::ModelParams;
pub use potential::PotentialSpec;
pub use state::State;

