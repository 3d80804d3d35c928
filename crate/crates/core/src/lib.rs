//! Bayesian inference of rate constants and latent populations in
//! stochastic kinetic models.
//!
//! The crate couples exact Gillespie simulation with a bootstrap particle
//! filter, and uses the filter's unbiased likelihood estimate inside two
//! samplers: particle-marginal Metropolis-Hastings ([`pmmh`]) and nonlinear
//! population Monte Carlo with clipped importance weights ([`npmc`]).
//! [`verify`] holds empirical checks of the convergence behaviour of
//! clipped importance sampling with approximate weights.

// `!(x > 0.0)` style guards are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod gillespie;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod npmc;
pub mod pmmh;
pub mod resample;
pub mod rng;
pub mod toy;
pub mod verify;

pub use error::{Result, SkmError};
