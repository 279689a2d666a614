//! Online training of recurrent networks with unbiased, low-variance gradient
//! estimators.
//!
//! The crate is built around a minimum-variance unbiased low-rank matrix
//! approximator ([`lowrank::opt`]) and the Kronecker-sum machinery on top of
//! it ([`kronsum::ok_compress`]). These drive a family of forward-mode
//! gradient estimators for a single-layer recurrent highway cell
//! ([`approximators`]), a deterministic training harness for a string
//! memorization task and character-level language modeling ([`train`]), and
//! gradient-noise measurement tooling ([`analysis`]).
//!
//! Everything is deterministic: randomness comes from counter-based streams
//! keyed by `(seed, step, lane)` so results are reproducible bit-for-bit
//! under any thread schedule.

pub mod analysis;
pub mod approximators;
mod error;
pub mod kronsum;
pub mod lowrank;
pub mod rng;
pub mod rnn;
pub mod smalllin;
pub mod train;

pub use error::{Error, Result};
