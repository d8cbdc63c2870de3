//! Spiked Fisher matrices `F = S2^{-1} S1` with a growing number of spikes:
//! data generation, extreme-eigenvalue computation, limiting-law quantities
//! and Monte Carlo validation of the consistency and fluctuation laws.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod limit_law;
pub mod model;
pub mod montecarlo;
pub mod report;
pub mod sampling;
pub mod spectra;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
