//! Deviation-tracking resource allocation over networks with random link failure.
//!
//! Agents with private quadratic costs and demands agree on an allocation that meets total
//! demand at minimum total cost. Each agent tracks the global supply-demand deviation and
//! equalizes marginal costs with its neighbors, over links that fail at random.
//!
//! - [`cost`]: cost functions and the closed-form optimum.
//! - [`network`]: random weight matrices and their spectra.
//! - [`stepsize`]: contraction constants, admissible regions, optimal stepsizes.
//! - [`engine`]: iterations and Monte-Carlo runs.
//! - [`metrics`]: residuals, aggregation and rate estimates.
//! - [`config`] and [`harness`]: experiment files, sweeps and output writers.

pub mod config;
pub mod cost;
pub mod engine;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod network;
pub mod stepsize;

pub use error::{Error, Result};
