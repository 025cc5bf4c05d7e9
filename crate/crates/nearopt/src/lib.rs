//! Near-optimal tests for composite hypotheses about the parameters of
//! Gaussian, Poisson and discrete observation schemes.
//!
//! Pairwise tests come from a concave saddle-point problem solved by
//! Frank–Wolfe ([`pairtest`]); [`multitest`] aggregates them with spectral
//! risk certificates, and [`models`] builds the Markov-chain, sensor,
//! indirect-observation and emission-tomography instances on top.

pub mod sets;
pub mod solver;
pub mod schemes;
pub mod pairtest;
pub mod multitest;
pub mod models;
pub mod harness;
