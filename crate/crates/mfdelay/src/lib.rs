//! Finite-horizon decentralized LQ control of discrete-time mean-field
//! systems with multiplicative noise, where h+1 controllers observe the noise
//! history with controller-specific delays 0..h.
//!
//! * [`model`] — problem definition, validation and the JSON configuration format.
//! * [`riccati`] — backward Riccati pass, optimal gains and optimal cost.
//! * [`predictor`] — predictor bank, control assembly and Monte Carlo simulation.
//! * [`verify`] — exact cost, residual checks, stationarity and a brute-force oracle.
//! * [`cli`] — the commands behind the `mfdelay` binary.

// Index loops mirror the matrix notation (controller i, time τ, level s).
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod linalg;
pub mod model;
pub mod predictor;
pub mod riccati;
pub mod verify;

pub use error::{Error, Result};
