//! Fidelity (Loschmidt echo) decay in quantized one-dimensional kicked maps.
//!
//! The crate is organised bottom-up:
//!
//! * [`classical`]: the standard and sawtooth maps, tangent dynamics and
//!   finite-time stretching statistics.
//! * [`action`]: first-order action differences along unperturbed orbits,
//!   their momentum derivatives, stationary points and diffusion constants.
//! * [`quantum`]: torus quantization, FFT Floquet propagation with a dense
//!   matrix oracle, initial states and exact fidelity curves.
//! * [`semiclassical`]: momentum-integral approximants and the regime
//!   predictors built on top of the classical quantities.
//! * [`stats`]: histograms, stable-law densities and fits, decay-rate fits.
//!
//! Time convention: the kick at `t = 0` is part of state preparation and is
//! always unperturbed. Fidelity at integer `t` is recorded right after kick
//! `t`, so `t` perturbed kicks have acted. Classically this means the action
//! difference sums the perturbation over the positions `r(1), ..., r(t)` of
//! the kick-first map.

pub mod action;
pub mod classical;
pub mod error;
pub mod export;
pub mod quantum;
pub mod rng;
pub mod semiclassical;
pub mod stats;

mod optimize;
mod quadrature;

pub use error::{Error, Result};

pub use num_complex::Complex64;

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
