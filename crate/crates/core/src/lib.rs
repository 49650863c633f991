//! Distributed estimation of scalar node variables from noisy relative
//! measurements when the network topology switches according to a Markov
//! chain.
//!
//! The crate covers the estimator itself, the clock-synchronisation
//! instantiation (log-skews and offsets), the jump-linear-system analysis
//! that certifies mean-square convergence and predicts the limiting error
//! moments, mobility-driven topology generation, an entropy-based Markov
//! order test, and a seeded Monte Carlo harness.

pub mod cli;
pub mod clock;
pub mod config;
pub mod error;
pub mod estimator;
pub mod graph;
pub mod mjls;
pub mod mobility;
pub mod montecarlo;
pub mod order;
pub mod topology;

pub use error::{Error, Result};
