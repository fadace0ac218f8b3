//! Bayesian estimation of day-to-day origin-destination flows from link
//! counts.
//!
//! Mean OD flows evolve as a dynamic linear model whose observation matrix is
//! built from a logit route-choice model over past route costs. A Gibbs
//! sampler alternates forward filtering backward sampling of the flows with a
//! Metropolis-Hastings update of the route-choice sensitivities. A simulator
//! generates congested synthetic data for experiments.

pub mod cli;
pub mod config;
pub mod dlm;
pub mod error;
pub mod formats;
pub mod network;
pub mod route_choice;
pub mod sampler;
pub mod simulator;
pub mod stochastics;

pub use error::{Error, Result};
