//! Function-space MCMC with ensemble-adapted Gaussian jumps.
//!
//! Gaussian measures on finite-difference grids, preconditioned
//! Crank–Nicolson samplers and their ensemble variants, benchmark inverse
//! problems and chain diagnostics.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod gauss;
pub mod problems;
pub mod rng;
pub mod samplers;

pub use error::{Error, Result};
