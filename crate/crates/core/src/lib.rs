//! Splitting averaged-vector-field (AVF) integrator for the quasi-Markovian
//! generalized Langevin equation
//!
//! ```text
//! dv  = (-γ v - U'(x) + Σ λ_ℓ z_ℓ) dt + √(2γ) dW_0
//! dz_ℓ = (-α_ℓ z_ℓ - λ_ℓ v) dt + √(2α_ℓ) dW_ℓ
//! dx  = v dt
//! ```
//!
//! Each step composes an implicit, energy-preserving AVF update of the
//! Hamiltonian part `H = H_0 + (γ/2) v x` with the exact Ornstein–Uhlenbeck
//! flow of the remaining linear stochastic part.
//!
//! Modules:
//! - [`model`]: parameters, polynomial potentials, Hamiltonians, and the exact
//!   Gibbs–Boltzmann reference measure.
//! - [`integrator`]: the one-step map, noise generation and coarsening, and an
//!   Euler–Maruyama baseline.
//! - [`malliavin`]: closed-form Jacobians, transfer matrices and the Malliavin
//!   covariance recursion.
//! - [`montecarlo`]: reproducible ensembles, strong/weak error tables,
//!   temporal averages and density estimates.
//!
//! Ensembles run on rayon when the `parallel` feature is enabled (default);
//! every output is independent of the worker count.

pub mod error;
pub mod exec;
pub mod integrator;
pub mod linalg;
pub mod malliavin;
pub mod model;
pub mod montecarlo;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use exec::Execution;
pub use integrator::{NoiseBlock, StepRecord, StepperConfig, StepperOptions};
pub use model::{GibbsReference, ModelParams, Observable, PotentialSpec, State};
