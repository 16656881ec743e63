//! Monte Carlo benchmarking of binary prediction methods.
//!
//! The crate generates equi-correlated logistic data over a factorial scenario
//! grid, fits logistic regression, the elastic net, the adaptive elastic net,
//! a random forest and AINET (an elastic net whose L1 weights come from forest
//! importances), scores them on fresh test data, and compares AINET against each
//! competitor with multiplicity-adjusted intervals. The [`qrp`] module applies
//! questionable research practices to a finished study, always leaving an
//! audit trail.

pub mod analysis;
pub mod datagen;
pub mod engine;
pub mod error;
pub mod filter;
pub mod forest;
pub mod math;
pub mod metrics;
pub mod models;
pub mod protocol;
pub mod qrp;
pub mod records;
pub mod rng;

pub mod cli;

pub use error::{Error, Result};
