//! Safe-control synthesis for systems whose one-step dynamics are learned
//! from an offline transition dataset with a noise-free Gaussian process.
//!
//! The crate is organised around the offline/online split of the method:
//!
//! * [`gp`] fits the dynamics model and provides the certified posterior
//!   bounds (variance bound, mean bound, uniform error bound).
//! * [`safety_index`] evaluates the energy-style safety index
//!   `phi = sigma + d_min^n - d^n - k * d_dot`, its Lipschitz constant and
//!   the probabilistic one-step upper bound `U_f`.
//! * [`synthesis`] discretizes the state space, lower-bounds the inf-sup
//!   of the one-step change of `d_dot`, builds the dataset, checks the
//!   discretization condition and selects the safety-index gain.
//! * [`safeguard`] projects nominal controls onto the set of safe controls
//!   with a multi-directional line search.
//! * [`env`] hosts the planar two-link arm and a double-integrator toy
//!   environment; [`sim`] runs safeguarded rollouts and feasibility maps.
//!
//! Data-parallel sweeps go through [`parallel::Exec`], which uses rayon
//! when the `parallel` feature is enabled and a sequential loop otherwise.

pub mod domain;
pub mod env;
pub mod gp;
pub mod parallel;
pub mod safeguard;
pub mod safety_index;
pub mod sim;
pub mod synthesis;
pub mod validation;

pub use domain::BoxDomain;

pub use gp::{Dataset, GpModel, Kernel, PredictResult, TransitionSample};
pub use parallel::Exec;
pub use env::{EnvConfig, Environment, LipschitzBundle};
pub use safeguard::{Safeguard, SafeguardConfig, SafeguardResult, SafeguardStatus};
pub use safety_index::{SafetyCheck, SafetyIndexParams, SafetyMeasure};


